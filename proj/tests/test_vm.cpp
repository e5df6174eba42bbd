#include <doctest.h>

#include <cmath>

#include "gradc/ad.hpp"
#include "gradc/error.hpp"
#include "gradc/frontend.hpp"
#include "gradc/fuzz.hpp"
#include "gradc/infer.hpp"
#include "gradc/vm.hpp"

using namespace gradc;

namespace {

struct Program {
    GraphStore store;
    LoweredModule module;

    explicit Program(std::string_view source) : module(lower(store, parse(source))) {}

    Value run(std::vector<Value> args, const char* fn = "f", VmOptions o = {}) {
        return gradc::run(store, module.entry(fn), args, o);
    }
};

Value ones(std::int64_t r, std::int64_t c) {
    return Value::tensor({r, c}, std::vector<double>(static_cast<std::size_t>(r * c), 1.0));
}

double rel(double a, double b) { return std::abs(a - b) / std::max({1.0, std::abs(a), std::abs(b)}); }

} // namespace

TEST_CASE("cube and loops run") {
    CHECK(Program("def f(x):\n    a = x ** 3\n    return a\n").run({Value(2.0)}).as_float() == 8.0);
    CHECK(Program("def f(x):\n    i = 0.0\n    while i < 3.0:\n        i = i + 1.0\n    return i\n")
              .run({Value(0.0)})
              .as_float() == 3.0);
}

TEST_CASE("grad is a first-class value inside the language") {
    Program p("def cube(x):\n    return x ** 3\ndef f(x):\n    g = grad(cube)\n    return g(x)\n");
    GradContext ad(p.store);
    Vm vm(p.store, {}, &ad);
    Value args[] = {Value(2.0)};
    CHECK(vm.run(p.module.entry("f"), args).as_float() == 12.0);
}

TEST_CASE("call dispatches on the callee") {
    Program p("def id(x):\n    return x\ndef f(x):\n    return lambda y: y * x\n");
    Vm vm(p.store);
    Value five[] = {Value(5.0)};
    CHECK(vm.call(Value(GraphRef{p.module.entry("id")}), five).as_float() == 5.0);
    Value two[] = {Value(2.0)};
    Value closure = vm.run(p.module.entry("f"), two);
    CHECK(closure.is(ValueKind::Closure));
    CHECK(vm.call(closure, five).as_float() == 10.0);
    Value ab[] = {Value(1.0), Value(2.0)};
    CHECK(vm.call(Value(Primitive::Add), ab).as_float() == 3.0);
    CHECK_THROWS_WITH_AS(vm.call(Value(3.0), {}), doctest::Contains("not callable"), Error);
}

TEST_CASE("primitive kernels") {
    Value a = Value::tensor({2, 2}, {1, 2, 3, 4});
    Value eye = Value::tensor({2, 2}, {1, 0, 0, 1});
    Value mm[] = {a, eye};
    CHECK(identical(primitive_eval(Primitive::Matmul, mm), a));
    Value o[] = {ones(2, 2)};
    CHECK(primitive_eval(Primitive::ReduceSum, o).as_float() == 4.0);
    Value sw[] = {Value(false), Value(1.0), Value(2.0)};
    CHECK(primitive_eval(Primitive::Switch, sw).as_float() == 2.0);
    Value t[] = {Value::tensor({2, 3}, {1, 2, 3, 4, 5, 6})};
    CHECK(identical(primitive_eval(Primitive::Transpose, t), Value::tensor({3, 2}, {1, 4, 2, 5, 3, 6})));
    Value d[] = {Value(2.5), Value::tuple({Value(std::int64_t{2}), Value(std::int64_t{1})})};
    CHECK(identical(primitive_eval(Primitive::Distribute, d), Value::tensor({2, 1}, {2.5, 2.5})));
    Value bad[] = {Value::tensor({2}, {1, 2}), Value::tensor({3}, {1, 2, 3})};
    CHECK_THROWS_AS(primitive_eval(Primitive::Add, bad), Error);
    Value rank1[] = {Value::tensor({2}, {1, 2}), Value::tensor({2}, {1, 2})};
    CHECK_THROWS_AS(primitive_eval(Primitive::Matmul, rank1), Error);
}

TEST_CASE("float semantics never trap") {
    Program p("def f(x, y):\n    return x / y\n");
    CHECK(std::isinf(p.run({Value(1.0), Value(0.0)}).as_float()));
    CHECK(std::isnan(p.run({Value(0.0), Value(0.0)}).as_float()));
}

TEST_CASE("runtime type errors and the recursion limit") {
    Program p("def f(x, y):\n    return x + y\n");
    CHECK_THROWS_AS(p.run({Value(1.0), Value(true)}), Error);
    Program deep("def f(x):\n    return 1.0 + f(x)\n");
    VmOptions o;
    o.recursion_limit = 1000;
    CHECK_THROWS_WITH_AS(deep.run({Value(1.0)}, "f", o), doctest::Contains("recursion limit"), Error);
}

TEST_CASE("deep recursion within the limit") {
    Program p("def s(n):\n    if n == 0:\n        return 0.0\n    return 1.0 + s(n - 1)\ndef f(x):\n    return s(50000)\n");
    CHECK(p.run({Value(0.0)}).as_float() == 50000.0);
}

TEST_CASE("finite differences") {
    Program cube("def f(x):\n    return x ** 3\n");
    Value x[] = {Value(2.0)};
    CHECK(rel(finite_diff_grad(cube.store, cube.module.entry("f"), x, 0, 1e-4).as_float(), 12.0) < 1e-6);
    Program id("def f(x):\n    return x\n");
    for (double v : {-3.0, 0.0, 0.7, 1e3}) {
        Value a[] = {Value(v)};
        CHECK(std::abs(finite_diff_grad(id.store, id.module.entry("f"), a, 0).as_float() - 1.0) < 1e-10);
    }
    Program sq("def f(x):\n    return reduce_sum(x * x)\n");
    Value t[] = {ones(2, 2)};
    Value g = finite_diff_grad(sq.store, sq.module.entry("f"), t, 0);
    REQUIRE(g.is(ValueKind::Tensor));
    for (double v : g.as_tensor().data) CHECK(std::abs(v - 2.0) < 1e-6);
    Program vec("def f(x):\n    return (x, x)\n");
    CHECK_THROWS_AS(finite_diff_grad(vec.store, vec.module.entry("f"), x, 0), Error);
}

TEST_CASE("evaluation is deterministic and order independent") {
    for (std::uint64_t seed = 0; seed < 120; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CAPTURE(fp.source);
        Program p(fp.source);
        Value base = p.run(fp.args);
        CHECK(identical(base, p.run(fp.args)));
        VmOptions o;
        o.shuffle_seed = seed * 7919 + 1;
        CHECK(identical(base, p.run(fp.args, "f", o)));
    }
}

TEST_CASE("untyped and specialized programs agree") {
    for (std::uint64_t seed = 0; seed < 120; ++seed) {
        FuzzProgram fp = generate_program(seed);
        CAPTURE(fp.source);
        Program p(fp.source);
        GradContext ad(p.store);
        std::vector<AbstractValue> sig;
        for (const auto& a : fp.args) sig.push_back(abstract_of(a, false));
        Specialization s = specialize(p.store, ad, p.module.entry("f"), sig);
        CHECK(identical(p.run(fp.args), gradc::run(p.store, s.graph, fp.args)));
    }
}
