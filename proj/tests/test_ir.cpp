#include <doctest.h>

#include <algorithm>

#include "gradc/error.hpp"
#include "gradc/frontend.hpp"
#include "gradc/ir.hpp"
#include "gradc/ir_text.hpp"
#include "gradc/vm.hpp"

using namespace gradc;

namespace {

bool has_use(const GraphStore& s, NodeId value, NodeId user, std::uint32_t pos) {
    const auto& u = s.users(value);
    return std::find(u.begin(), u.end(), Use{user, pos}) != u.end();
}

std::string dump_one(const GraphStore& s, GraphId g, DumpStyle style = DumpStyle::Multiline) {
    GraphId roots[] = {g};
    return dump_text(s, roots, style);
}

/// Builds f(x) = pow(x, 3.0) by hand.
GraphId cube(GraphStore& s) {
    GraphId f = s.new_graph("f");
    NodeId x = s.add_parameter(f, "x");
    NodeId three = s.constant(Value(3.0));
    NodeId args[] = {x, three};
    NodeId a = s.apply(f, s.constant_prim(Primitive::Pow), args);
    s.set_node_name(a, "a");
    s.set_return(f, a);
    return f;
}

} // namespace

TEST_CASE("new_graph and add_parameter") {
    GraphStore s;
    GraphId f = s.new_graph("f");
    GraphId g = s.new_graph("f");
    CHECK(f != g);
    CHECK(s.graph(f).parameters.empty());
    NodeId p0 = s.add_parameter(f, "a");
    NodeId p1 = s.add_parameter(f, "b");
    CHECK(s.node(p0).position == 0);
    CHECK(s.node(p1).position == 1);
    CHECK(s.node(p0).owner == f);
    CHECK(s.graph(f).parameters == std::vector<NodeId>{p0, p1});
}

TEST_CASE("dumping an unfinished graph fails") {
    GraphStore s;
    GraphId f = s.new_graph("f");
    s.add_parameter(f, "x");
    CHECK_THROWS_WITH_AS(dump_one(s, f), doctest::Contains("return node unset"), Error);
}

TEST_CASE("apply keeps the reverse-use index in sync") {
    GraphStore s;
    GraphId f = cube(s);
    NodeId x = s.graph(f).parameters[0];
    NodeId a = s.graph(f).return_node;
    CHECK(s.node(a).inputs.size() == 3);
    CHECK(s.primitive_of_constant(s.node(a).inputs[0]) == Primitive::Pow);
    REQUIRE(s.users(x).size() == 1);
    CHECK(has_use(s, x, a, 1));

    GraphId g = s.new_graph("g");
    NodeId y = s.add_parameter(g, "y");
    NodeId args[] = {y, y};
    NodeId m = s.apply(g, s.constant_prim(Primitive::Mul), args);
    CHECK(has_use(s, y, m, 1));
    CHECK(has_use(s, y, m, 2));
    NodeId thunk = s.apply(g, s.constant_graph(f), {});
    CHECK(s.node(thunk).inputs.size() == 1);
    s.set_return(g, m);
    CHECK(s.audit().empty());
}

TEST_CASE("constants") {
    GraphStore s;
    NodeId c = s.constant(Value(3.0));
    CHECK(s.node(c).inputs.empty());
    CHECK_FALSE(s.node(c).owner.valid());
    CHECK(s.users(c).empty());
    CHECK(s.constant(Value(3.0)) == c);
    NodeId t1 = s.constant(Value::tensor({2}, {1, 2}));
    NodeId t2 = s.constant(Value::tensor({2}, {1, 2}));
    CHECK(t1 != t2);
}

TEST_CASE("set_return keeps the last node") {
    GraphStore s;
    GraphId f = s.new_graph("id");
    NodeId x = s.add_parameter(f, "x");
    s.set_return(f, s.constant(Value(1.0)));
    s.set_return(f, x);
    CHECK(s.graph(f).return_node == x);
    CHECK(dump_one(s, f, DumpStyle::Compact) == "graph id(%x) { return %x }\n");
}

TEST_CASE("set_input and replace_all_uses maintain bidirectionality") {
    GraphStore s;
    GraphId f = cube(s);
    NodeId a = s.graph(f).return_node;
    NodeId two = s.constant(Value(2.0));
    s.set_input(a, 2, two);
    CHECK(has_use(s, two, a, 2));
    CHECK(s.audit().empty());
    NodeId x = s.graph(f).parameters[0];
    NodeId args[] = {x};
    NodeId n = s.apply(f, s.constant_prim(Primitive::Neg), args);
    s.replace_all_uses(x, n);
    // The new node itself was rewired too, so only repair its own input.
    s.set_input(n, 1, x);
    CHECK(has_use(s, n, a, 1));
    CHECK(s.audit().empty());
}

TEST_CASE("cube primal dump") {
    GraphStore s;
    GraphId f = cube(s);
    CHECK(dump_one(s, f, DumpStyle::Compact) == "graph f(%x) { %a = pow(%x, 3.0); return %a }\n");
    CHECK(dump_one(s, f) == dump_one(s, f));
}

TEST_CASE("free variables and nesting") {
    GraphStore s;
    auto m = lower(s, parse("def f(x):\n    def g():\n        return x + 1.0\n    return g()\n"
                            "def k(x):\n    return x * x\n"));
    GraphId f = m.entry("f");
    GraphId k = m.entry("k");
    CHECK(s.free_variables(k).empty());
    CHECK_FALSE(s.nesting_parent(f).has_value());
    auto nested = s.descendants(f);
    REQUIRE(nested.size() == 1);
    GraphId g = nested[0];
    CHECK(s.free_variables(g) == std::vector<NodeId>{s.graph(f).parameters[0]});
    CHECK(s.free_variables(g) == s.free_variables(g));
    CHECK(s.nesting_parent(g) == f);
}

TEST_CASE("nesting uses the innermost referenced graph") {
    GraphStore s;
    auto m = lower(s, parse("def f(x):\n"
                            "    def g(y):\n"
                            "        def h():\n"
                            "            return x\n"
                            "        return h() + y\n"
                            "    return g(1.0)\n"));
    GraphId f = m.entry("f");
    GraphId g, h;
    for (GraphId d : s.descendants(f)) {
        if (s.graph(d).parameters.size() == 1) g = d;
        else h = d;
    }
    REQUIRE(g.valid());
    REQUIRE(h.valid());
    CHECK(s.nesting_parent(g) == f);
    CHECK(s.nesting_parent(h) == f);
}

TEST_CASE("clone_graph") {
    GraphStore s;
    auto m = lower(s, parse("def f(x):\n    def g():\n        return x + 1.0\n    return g() * x\n"));
    GraphId f = m.entry("f");
    std::string before = dump_one(s, f);
    std::size_t graphs = s.graphs().size();
    CloneMap map;
    GraphId c = clone_graph(s, f, {}, &map);
    CHECK(s.graphs().size() == graphs + 2);
    CHECK(dump_one(s, f) == before);
    for (NodeId n : s.owned_nodes(c))
        for (NodeId o : s.owned_nodes(f)) CHECK(n != o);
    Value arg[] = {Value(3.0)};
    CHECK(run(s, c, arg).as_float() == run(s, f, arg).as_float());
    CHECK(s.audit().empty());
}

TEST_CASE("clone_graph substitutes nodes") {
    GraphStore s;
    GraphId f = s.new_graph("f");
    NodeId x = s.add_parameter(f, "x");
    NodeId c = s.constant(Value(5.0));
    NodeId args[] = {x, c};
    s.set_return(f, s.apply(f, s.constant_prim(Primitive::Add), args));
    GraphId f2 = clone_graph(s, f, {{c, s.constant(Value(2.0))}});
    Value arg[] = {Value(1.0)};
    CHECK(run(s, f2, arg).as_float() == 3.0);
    CHECK(run(s, f, arg).as_float() == 6.0);
}

TEST_CASE("textual IR round-trips") {
    GraphStore s;
    auto m = lower(s, parse("def f(x, n):\n"
                            "    def g(y):\n"
                            "        return (y * x, n)\n"
                            "    i = 0\n"
                            "    while i < n:\n"
                            "        x = x + 1.0\n"
                            "        i = i + 1\n"
                            "    t = g(x)\n"
                            "    return t[0]\n"));
    GraphId f = m.entry("f");
    std::string text = dump_one(s, f);
    GraphStore s2;
    ParsedModule pm = parse_text(s2, text);
    REQUIRE(!pm.graphs.empty());
    CHECK(dump_one(s2, pm.graphs[0]) == text);
    Value args[] = {Value(2.0), Value(std::int64_t{3})};
    CHECK(identical(run(s2, pm.graphs[0], args), run(s, f, args)));
    CHECK(s2.audit().empty());
}

TEST_CASE("remove_nodes refuses nodes still in use") {
    GraphStore s;
    GraphId f = cube(s);
    NodeId x = s.graph(f).parameters[0];
    NodeId args[] = {x};
    NodeId dead = s.apply(f, s.constant_prim(Primitive::Neg), args);
    NodeId used[] = {s.graph(f).return_node};
    CHECK_THROWS_AS(s.remove_nodes(used), Error);
    NodeId unused[] = {dead};
    s.remove_nodes(unused);
    CHECK_FALSE(s.contains(dead));
    CHECK(s.users(x).size() == 1);
    CHECK(s.audit().empty());
}
