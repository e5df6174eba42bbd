#include <doctest.h>

#include <cmath>
#include <regex>
#include <sstream>

#include "gradc/error.hpp"
#include "gradc/fuzz.hpp"
#include "gradc/ir_text.hpp"
#include "gradc/pipeline.hpp"

using namespace gradc;

namespace {

std::string dump(GraphStore& s, GraphId g, DumpStyle style = DumpStyle::Multiline) {
    GraphId roots[] = {g};
    return dump_text(s, roots, style);
}

struct Census {
    std::size_t applies = 0;
    std::size_t arithmetic = 0;
    std::size_t tuple_ops = 0;
    std::size_t env_ops = 0;
    std::size_t graph_calls = 0;
    std::size_t switches = 0;
    std::size_t graphs = 0;
};

Census census(const GraphStore& s, GraphId root) {
    Census c;
    GraphId roots[] = {root};
    for (GraphId g : s.reachable_graphs(roots)) {
        ++c.graphs;
        for (NodeId id : s.owned_nodes(g)) {
            const Node& n = s.node(id);
            if (!n.is_apply()) continue;
            ++c.applies;
            auto p = s.primitive_of_constant(n.inputs[0]);
            if (!p) {
                ++c.graph_calls;
                continue;
            }
            switch (*p) {
                case Primitive::Add:
                case Primitive::Sub:
                case Primitive::Mul:
                case Primitive::Div:
                case Primitive::Pow:
                case Primitive::Neg: ++c.arithmetic; break;
                case Primitive::MakeTuple:
                case Primitive::TupleGetItem:
                case Primitive::TupleSetItem: ++c.tuple_ops; break;
                case Primitive::EnvGetItem:
                case Primitive::EnvSetItem: ++c.env_ops; break;
                case Primitive::Switch: ++c.switches; break;
                default: break;
            }
        }
    }
    return c;
}

std::size_t total_rewrites(const OptStats& st) {
    std::size_t n = 0;
    for (const auto& [rule, count] : st.rules) n += count;
    return n;
}

Compiled compile(Session& s, std::string_view sig, unsigned order = 0, std::size_t wrt = 0) {
    auto args = parse_signature(sig);
    return s.compile("f", args, order, wrt);
}

double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

double max_rel(const Value& x, const Value& y) {
    if (x.is(ValueKind::Tensor)) {
        double m = 0;
        for (std::size_t i = 0; i < x.as_tensor().data.size(); ++i)
            m = std::max(m, rel(x.as_tensor().data[i], y.as_tensor().data[i]));
        return m;
    }
    return rel(x.as_float(), y.as_float());
}

PipelineOptions level(int l) {
    PipelineOptions o;
    o.opt_level = l;
    return o;
}

} // namespace

TEST_CASE("the gradient of cube optimizes to 3 * x * x") {
    Session s("def f(x):\n    a = x ** 3\n    return a\n");
    Compiled c = compile(s, "f64", 1);
    Census k = census(s.store(), c.graph);
    CHECK(k.tuple_ops == 0);
    CHECK(k.env_ops == 0);
    CHECK(k.graph_calls == 0);
    CHECK(k.arithmetic <= 4);
    CHECK(k.graphs == 1);
    Value x[] = {Value(2.0)};
    CHECK(s.run(c, x).as_float() == 12.0);
    std::string text = dump(s.store(), c.graph);
    CHECK(text.find("mul(%x, %x)") != std::string::npos);
    CHECK(text.find("mul(3.0, ") != std::string::npos);
    CHECK(c.stats.fired("inline") > 0);
    CHECK(c.stats.fired("dce") > 0);
    CHECK(s.store().audit().empty());
}

TEST_CASE("an optimal graph reaches the fixpoint in one round") {
    Session s("def f(x):\n    return x * x\n");
    Compiled c = compile(s, "f64");
    CHECK(c.stats.iterations == 1);
    CHECK(total_rewrites(c.stats) == 0);
}

TEST_CASE("optimizing twice changes nothing") {
    Session s("def g(y):\n    return (y * 2.0, y)\ndef f(x):\n    t = g(x)\n    return t[0] + t[1] * 1.0\n");
    Compiled c = compile(s, "f64", 1);
    std::string once = dump(s.store(), c.graph);
    OptStats again = optimize(s.store(), c.graph, nullptr);
    CHECK(total_rewrites(again) == 0);
    CHECK(dump(s.store(), c.graph) == once);
}

TEST_CASE("tuple and identity rules") {
    struct Case {
        const char* source;
        const char* sig;
        const char* rule;
        const char* body;
    };
    Case cases[] = {
        {"def f(x, y):\n    t = (x, y)\n    return t[1]\n", "f64, f64", "getitem_make_tuple", "return %y"},
        {"def f(x):\n    return x * 1.0\n", "f64", "mul_one", "return %x"},
        {"def f(x):\n    return x + 0.0\n", "f64", "add_zero", "return %x"},
        {"def f(x):\n    return x - 0.0\n", "f64", "sub_zero", "return %x"},
        {"def f(x):\n    return x / 1.0\n", "f64", "div_one", "return %x"},
        {"def f(x):\n    return x ** 1.0\n", "f64", "pow_one", "return %x"},
        {"def f(x):\n    return x * 0.0\n", "f64", "mul_zero", "return 0.0"},
        {"def f(x):\n    return -(-x)\n", "f64", "neg_neg", "return %x"},
        {"def f(x):\n    return x * (2.0 * 3.0)\n", "f64", "fold", "mul(%x, 6.0)"},
        {"def f(x):\n    return x ** 2.0\n", "f64", "pow_two", "mul(%x, %x)"},
        {"def f(x):\n    if True:\n        return x\n    return 2.0 * x\n", "f64", "switch_constant", "return %x"},
        {"def id(y):\n    return y\ndef f(x):\n    return id(x)\n", "f64", "inline", "return %x"},
    };
    for (const auto& c : cases) {
        CAPTURE(c.source);
        Session s(c.source);
        Compiled out = compile(s, c.sig);
        CHECK(out.stats.fired(c.rule) > 0);
        std::string text = dump(s.store(), out.graph, DumpStyle::Compact);
        CAPTURE(text);
        CHECK(text.find(c.body) != std::string::npos);
        CHECK(s.store().audit().empty());
    }
}

TEST_CASE("folding never hides an error or a non-finite value") {
    std::ostringstream diag;
    PipelineOptions o;
    o.diagnostics = &diag;
    Session w("def f(x):\n    return x + 1.0 / 0.0\n", o);
    Compiled c = compile(w, "f64");
    CHECK(dump(w.store(), c.graph).find("div(1.0, 0.0)") != std::string::npos);
    REQUIRE(c.stats.warnings.size() == 1);
    CHECK(diag.str().find("[opt] warning:") != std::string::npos);
    Value x[] = {Value(1.0)};
    CHECK(std::isinf(w.run(c, x).as_float()));
}

TEST_CASE("common subexpressions merge within a graph") {
    Session s("def f(x):\n    a = x ** 2.0\n    b = x ** 2.0\n    return a + b\n");
    Compiled c = compile(s, "f64");
    CHECK(census(s.store(), c.graph).applies == 2);
    CHECK(c.stats.fired("cse") > 0);

    Session sq("def f(x):\n    return x * x\n");
    Compiled plain = compile(sq, "f64", 1);
    Session sq0("def f(x):\n    return x * x\n", level(1));
    Compiled unmerged = compile(sq0, "f64", 1);
    CHECK(census(sq.store(), plain.graph).applies < census(sq0.store(), unmerged.graph).applies);
}

TEST_CASE("recursive calls are not inlined") {
    Session s("def fact(n):\n    if n == 0:\n        return 1\n    return n * fact(n - 1)\ndef f(n):\n    return fact(n)\n");
    Compiled c = compile(s, "i64");
    CHECK(census(s.store(), c.graph).graph_calls >= 1);
    Value five[] = {Value(std::int64_t{5})};
    CHECK(s.run(c, five).as_int() == 120);
}

TEST_CASE("opt levels") {
    const char* src = "def g(a):\n    return a * 1.0\ndef f(x):\n    t = (g(x), x)\n    return t[0]\n";
    Session s0(src, level(0));
    Compiled c0 = compile(s0, "f64");
    CHECK(total_rewrites(c0.stats) == 0);
    CHECK(census(s0.store(), c0.graph).tuple_ops == 2);

    Session s1(src, level(1));
    Compiled c1 = compile(s1, "f64");
    Census k1 = census(s1.store(), c1.graph);
    CHECK(k1.tuple_ops == 0);
    CHECK(k1.graph_calls == 1);
    CHECK(c1.stats.fired("inline") == 0);

    Session s2(src, level(2));
    Compiled c2 = compile(s2, "f64");
    CHECK(dump(s2.store(), c2.graph, DumpStyle::Compact).find("return %x") != std::string::npos);
}

TEST_CASE("trace lines name the rule and the node") {
    std::ostringstream trace;
    PipelineOptions o;
    o.opt_trace = &trace;
    Session s("def f(x):\n    a = x ** 3\n    return a\n", o);
    Compiled c = compile(s, "f64", 1);
    std::istringstream lines(trace.str());
    std::regex line_re(R"(RULE [a-z_]+ @%\S+)");
    std::size_t n = 0;
    for (std::string line; std::getline(lines, line); ++n) CHECK(std::regex_match(line, line_re));
    CHECK(n > 0);
    CHECK(n == total_rewrites(c.stats) - c.stats.fired("dce"));
}

TEST_CASE("after-pass hook sees the schedule order") {
    std::vector<std::string> passes;
    PipelineOptions o;
    o.after_pass = [&](std::string_view pass, std::size_t it, GraphId) {
        if (it == 1) passes.emplace_back(pass);
    };
    Session s("def f(x):\n    return x * x\n", o);
    compile(s, "f64", 1);
    CHECK(passes == std::vector<std::string>{"inline", "tuple", "fold", "algebraic", "cse", "dce"});
}

TEST_CASE("optimized dumps round-trip through the text parser") {
    Session s("def f(x, y):\n    def g(z):\n        return z * y\n    t = (g(x), x)\n    return t[0] ** 3\n");
    Compiled c = compile(s, "f64, f64", 1);
    std::string text = dump(s.store(), c.graph);
    GraphStore s2;
    ParsedModule pm = parse_text(s2, text);
    REQUIRE(!pm.graphs.empty());
    CHECK(dump(s2, pm.graphs[0]) == text);
    Value args[] = {Value(1.5), Value(-2.0)};
    CHECK(identical(run(s2, pm.graphs[0], args), s.run(c, args)));
}

TEST_CASE("optimization preserves values and gradients on the fuzz corpus") {
    std::size_t checked = 0;
    for (std::uint64_t seed = 0; seed < 500; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CAPTURE(fp.source);
        auto sig = signature_of(fp.args);
        Session before(fp.source, level(0));
        Session after(fp.source);
        Value a = before.run(before.compile("f", sig), fp.args);
        Value b = after.run(after.compile("f", sig), fp.args);
        CHECK(max_rel(a, b) <= 1e-12);
        if (seed % 5 == 0) {
            Value ga = before.run(before.compile("f", sig, 1, 0), fp.args);
            Value gb = after.run(after.compile("f", sig, 1, 0), fp.args);
            CHECK(max_rel(ga, gb) <= 1e-12);
        }
        CHECK(after.store().audit().empty());
        ++checked;
    }
    CHECK(checked == 500);
}

TEST_CASE("exceeding the iteration bound is an error naming the last rule") {
    Session s("def f(x):\n    a = x ** 3\n    return a\n");
    auto sig = parse_signature("f64");
    Specialization sp = s.specialize(s.differentiate(s.function("f"), 1, 0), sig);
    OptOptions o;
    o.max_iterations = 1;
    try {
        optimize(s.store(), sp.graph, &sp.types, o);
        FAIL("expected the bound to be hit");
    } catch (const Error& e) {
        CHECK(e.stage() == Stage::Opt);
        CHECK(e.message().find("last rule: ") != std::string::npos);
    }
}
