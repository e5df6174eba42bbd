// Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
// any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>

#include <fmt/core.h>

#include "gradc/error.hpp"
#include "gradc/frontend.hpp"
#include "gradc/fuzz.hpp"
#include "gradc/infer.hpp"
#include "gradc/ir_text.hpp"
#include "gradc/pipeline.hpp"

using namespace gradc;

namespace {

// Tolerances and budgets.
constexpr double kCubeSeconds = 1.0;
constexpr std::size_t kCubeMaxArithmetic = 4;
constexpr std::size_t kGradcheckPrograms = 240;
constexpr double kGradcheckTol = 1e-4;
constexpr double kGradcheckEps = 1e-4;
constexpr double kGradcheckSeconds = 60.0;
constexpr double kHigherOrderTol = 1e-9;
constexpr double kRecursionTol = 1e-9;
constexpr std::size_t kSoundnessPrograms = 500;
constexpr double kSoundnessTol = 1e-12;
constexpr std::size_t kAuditPrograms = 240;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

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

struct Outcome {
    bool pass = false;
    std::string detail;
};

/// Derivative of `fn` of the given order at the scalar arguments.
double derivative(std::string_view source, std::vector<Value> args, unsigned order, const char* fn = "f") {
    Session s{std::string(source)};
    Compiled c = s.compile(fn, signature_of(args), order, 0);
    return s.run(c, args).as_float();
}

Outcome cube_reproduction() {
    auto t0 = Clock::now();
    Session s("def f(x):\n    a = x ** 3\n    return a\n");
    Value x[] = {Value(2.0)};
    Compiled c = s.compile("f", signature_of(x), 1, 0);
    std::string printed = to_string(s.run(c, x));

    std::size_t tuple_ops = 0, env_ops = 0, closure_calls = 0, arithmetic = 0;
    GraphId roots[] = {c.graph};
    for (GraphId g : s.store().reachable_graphs(roots))
        for (NodeId id : s.store().owned_nodes(g)) {
            const Node& n = s.store().node(id);
            if (!n.is_apply()) continue;
            auto p = s.store().primitive_of_constant(n.inputs[0]);
            if (!p) {
                ++closure_calls;
                continue;
            }
            switch (*p) {
                case Primitive::MakeTuple:
                case Primitive::TupleGetItem:
                case Primitive::TupleSetItem: ++tuple_ops; break;
                case Primitive::EnvGetItem:
                case Primitive::EnvSetItem: ++env_ops; break;
                case Primitive::Add:
                case Primitive::Sub:
                case Primitive::Mul:
                case Primitive::Div:
                case Primitive::Pow:
                case Primitive::Neg: ++arithmetic; break;
                default: break;
            }
        }
    double secs = seconds_since(t0);
    bool pass = printed == "12.0" && tuple_ops == 0 && env_ops == 0 && closure_calls == 0 &&
                arithmetic <= kCubeMaxArithmetic && secs < kCubeSeconds;
    return {pass, fmt::format("grad prints {}, {} tuple ops, {} env ops, {} closure calls, {} arithmetic nodes, {:.3f} s",
                              printed, tuple_ops, env_ops, closure_calls, arithmetic, secs)};
}

Outcome gradient_suite() {
    auto t0 = Clock::now();
    std::size_t passed = 0;
    std::vector<std::size_t> per_category(kFuzzCategories.size());
    std::string first_failure;
    for (std::uint64_t seed = 0; seed < kGradcheckPrograms; ++seed) {
        FuzzProgram fp = generate_program(seed);
        try {
            Session s(fp.source);
            if (gradcheck(s, fp.entry, fp.args, std::nullopt, kGradcheckEps, kGradcheckTol).passed) {
                ++passed;
                ++per_category[static_cast<std::size_t>(fp.category)];
                continue;
            }
        } catch (const Error&) {
        }
        if (first_failure.empty()) first_failure = fmt::format(", first failure seed {}", seed);
    }
    double secs = seconds_since(t0);
    bool every_category = std::all_of(per_category.begin(), per_category.end(), [](std::size_t n) { return n > 0; });
    bool pass = passed == kGradcheckPrograms && kGradcheckPrograms >= 200 && every_category && secs < kGradcheckSeconds;
    return {pass, fmt::format("{} of {} programs over {} categories within tol {:.0e}, {:.2f} s{}", passed,
                              kGradcheckPrograms, kFuzzCategories.size(), kGradcheckTol, secs, first_failure)};
}

Outcome reverse_over_reverse() {
    struct Case {
        const char* name;
        const char* source;
        double x;
        double d2, d3;
    };
    // x^4 + x through a closure that captures x * x.
    const char* closure = "def f(x):\n    c = x * x\n    def p(y):\n        return c * y * y + y\n    return p(x)\n";
    Case cases[] = {
        {"x ** 3", "def f(x):\n    return x ** 3\n", 1.7, 6 * 1.7, 6},
        {"x * x * x", "def f(x):\n    return x * x * x\n", 1.7, 6 * 1.7, 6},
        {"closure polynomial", closure, 1.5, 12 * 1.5 * 1.5, 24 * 1.5},
    };
    double worst = 0;
    std::string failures;
    for (const auto& c : cases) {
        try {
            double e = std::max(rel(derivative(c.source, {Value(c.x)}, 2), c.d2),
                                rel(derivative(c.source, {Value(c.x)}, 3), c.d3));
            worst = std::max(worst, e);
            if (e > kHigherOrderTol) failures += fmt::format(" {} off by {:.1e};", c.name, e);
        } catch (const Error& e) {
            failures += fmt::format(" {}: {};", c.name, e.what());
        }
    }
    return {failures.empty(), fmt::format("second and third derivatives of 3 functions, max rel err {:.1e} (tol {:.0e}){}",
                                          worst, kHigherOrderTol, failures)};
}

Outcome recursion_and_loops() {
    const char* pow_rec = "def pow_rec(x, n):\n    if n == 0:\n        return 1.0\n    return x * pow_rec(x, n - 1)\n";
    const char* identity = "def f(x):\n    i = 5.0\n    y = x\n    while i < 3.0:\n        y = y * x\n        i = i + 1.0\n    return y\n";
    const char* constant = "def f(x):\n    i = 5.0\n    y = 2.0\n    while i < 3.0:\n        y = y * x\n        i = i + 1.0\n    return y\n";
    try {
        double g = derivative(pow_rec, {Value(2.0), Value(std::int64_t{5})}, 1, "pow_rec");
        double g0 = derivative(pow_rec, {Value(2.0), Value(std::int64_t{0})}, 1, "pow_rec");
        double gi = derivative(identity, {Value(0.7)}, 1);
        double gc = derivative(constant, {Value(0.7)}, 1);
        bool pass = rel(g, 80.0) <= kRecursionTol && g0 == 0.0 && gi == 1.0 && gc == 0.0;
        return {pass, fmt::format("pow_rec'(2, 5) = {}, pow_rec'(2, 0) = {}, zero-iteration loops give {} and {}",
                                  format_float(g), format_float(g0), format_float(gi), format_float(gc))};
    } catch (const Error& e) {
        return {false, e.what()};
    }
}

Outcome optimization_soundness() {
    std::size_t agree = 0, terminated = 0;
    double worst = 0;
    for (std::uint64_t seed = 0; seed < kSoundnessPrograms; ++seed) {
        FuzzProgram fp = generate_program(seed);
        auto sig = signature_of(fp.args);
        try {
            PipelineOptions none;
            none.opt_level = 0;
            Session before(fp.source, none);
            Session after(fp.source);
            Value a = before.run(before.compile(fp.entry, sig), fp.args);
            Compiled c = after.compile(fp.entry, sig);
            if (c.stats.iterations < OptOptions{}.max_iterations) ++terminated;
            double e = max_rel(a, after.run(c, fp.args));
            worst = std::max(worst, e);
            if (e <= kSoundnessTol) ++agree;
        } catch (const Error&) {
        }
    }
    bool pass = agree == kSoundnessPrograms && terminated == kSoundnessPrograms;
    return {pass, fmt::format("{} of {} programs agree (max rel err {:.1e}, tol {:.0e}), {} terminated within the bound",
                              agree, kSoundnessPrograms, worst, kSoundnessTol, terminated)};
}

Outcome specialization() {
    std::string detail;
    bool pass = true;
    try {
        Session s("def sq(a):\n    return a * a\ndef f(x, t):\n    return sq(x) + reduce_sum(sq(t))\n");
        auto sig = parse_signature("f64, t[3]");
        Specialization sp = s.specialize(s.function("f"), sig);
        GraphId roots[] = {sp.graph};
        std::size_t copies = 0;
        for (GraphId g : s.store().reachable_graphs(roots))
            if (s.store().graph(g).name.rfind("sq", 0) == 0) ++copies;
        Value args[] = {Value(3.0), Value::tensor({3}, {1, 2, 3})};
        double v = run(s.store(), sp.graph, args).as_float();
        pass &= copies == 2 && v == 23.0;
        detail += fmt::format("sq specialized {} times, f(3, [1,2,3]) = {}", copies, format_float(v));

        Session mm("def f(a, b):\n    return matmul(a, b)\n");
        auto mm_sig = parse_signature("t[2,3], t[3,4]");
        std::string result = to_string(mm.specialize(mm.function("f"), mm_sig).result);
        pass &= result == "t[2,4]";
        detail += fmt::format(", matmul infers {}", result);

        auto bad = parse_signature("t[2,3], t[5,4]");
        try {
            mm.specialize(mm.function("f"), bad);
            pass = false;
            detail += ", mismatch accepted";
        } catch (const Error& e) {
            pass &= e.stage() == Stage::Infer;
            detail += ", mismatch rejected by inference";
        }
    } catch (const Error& e) {
        return {false, e.what()};
    }
    return {pass, detail};
}

Outcome audits() {
    std::size_t clean = 0;
    std::string first_failure;
    PipelineOptions o;
    o.audit = true;
    for (std::uint64_t seed = 0; seed < kAuditPrograms; ++seed) {
        FuzzProgram fp = generate_program(seed);
        try {
            Session s(fp.source, o);
            s.check_store("lowering");
            auto sig = signature_of(fp.args);
            s.compile(fp.entry, sig);
            s.compile(fp.entry, sig, 1, 0);
            if (s.store().audit().empty()) {
                ++clean;
                continue;
            }
        } catch (const Error& e) {
            if (first_failure.empty()) first_failure = fmt::format(", seed {}: {}", seed, e.what());
        }
    }
    return {clean == kAuditPrograms,
            fmt::format("{} of {} programs audited after lowering, AD and every optimizer pass{}", clean,
                        kAuditPrograms, first_failure)};
}

Outcome purity_gate() {
    struct Case {
        const char* source;
        int line, column;
    };
    Case cases[] = {
        {"def f(x, v):\n    x[0] = v\n    return x\n", 2, 5},
        {"def f(x, y):\n    x += y\n    return x\n", 2, 5},
    };
    std::string detail;
    bool pass = true;
    for (const auto& c : cases) {
        try {
            GraphStore s;
            lower(s, parse(c.source));
            pass = false;
            detail += " accepted;";
        } catch (const Error& e) {
            bool located = e.loc().line == c.line && e.loc().column == c.column;
            pass &= located && e.stage() == Stage::Parse;
            detail += fmt::format(" {};", e.what());
        }
    }
    if (!detail.empty()) detail.pop_back();
    return {pass, "rejected with" + detail};
}

} // namespace

int main() {
    struct Criterion {
        const char* name;
        std::function<Outcome()> check;
    };
    Criterion criteria[] = {
        {"cube gradient reproduction", cube_reproduction},
        {"gradient correctness suite", gradient_suite},
        {"reverse over reverse", reverse_over_reverse},
        {"recursion and control flow", recursion_and_loops},
        {"optimization soundness", optimization_soundness},
        {"specialization", specialization},
        {"IR invariant audit", audits},
        {"purity gate", purity_gate},
    };
    int failed = 0;
    int index = 0;
    for (const auto& c : criteria) {
        ++index;
        Outcome o;
        try {
            o = c.check();
        } catch (const std::exception& e) {
            o = {false, e.what()};
        }
        if (!o.pass) ++failed;
        fmt::print("{} [{}] {}: {}\n", o.pass ? "PASS" : "FAIL", index, c.name, o.detail);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
