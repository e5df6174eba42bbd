#include <doctest.h>

#include <cmath>
#include <random>

#include "gradc/abstract.hpp"
#include "gradc/error.hpp"
#include "gradc/value.hpp"

using namespace gradc;

TEST_CASE("value literals print in the CLI syntax") {
    CHECK(to_string(Value(2.0)) == "2.0");
    CHECK(to_string(Value(12.0)) == "12.0");
    CHECK(to_string(Value(true)) == "true");
    CHECK(to_string(Value(std::int64_t{7})) == "7i");
    CHECK(to_string(Value::tensor({2, 2}, {1, 2, 3, 4})) == "t[2,2](1,2,3,4)");
    CHECK(to_string(Value::tuple({Value(1.0), Value(false)})) == "(1.0, false)");
}

TEST_CASE("value literals parse") {
    CHECK(parse_value("2.0").as_float() == 2.0);
    CHECK(parse_value("2").as_float() == 2.0);
    CHECK(parse_value("-1.5").as_float() == -1.5);
    CHECK(parse_value("7i").as_int() == 7);
    CHECK(parse_value("true").as_bool());
    const Tensor& t = parse_value("t[2,2](1,2,3,4)").as_tensor();
    CHECK(t.shape == std::vector<std::int64_t>{2, 2});
    CHECK(t.data == std::vector<double>{1, 2, 3, 4});
    auto tup = parse_value("(1.0, (2i, true))").as_tuple();
    REQUIRE(tup.size() == 2);
    CHECK(tup[1].as_tuple()[0].as_int() == 2);
}

TEST_CASE("malformed literals are rejected") {
    CHECK_THROWS_AS(parse_value("t[2](1,2,3)"), Error);
    CHECK_THROWS_AS(parse_value("(1.0,"), Error);
    CHECK_THROWS_AS(parse_value("abc"), Error);
}

TEST_CASE("float printing round-trips bit-exactly") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 2000; ++i) {
        double x = u(rng) * std::pow(10.0, static_cast<int>(rng() % 40) - 20);
        Value v(x);
        CHECK(identical(parse_value(to_string(v)), v));
    }
    for (double x : {0.1, 1.0 / 3.0, 1e300, 5e-324, -0.0})
        CHECK(identical(parse_value(to_string(Value(x))), Value(x)));
}

TEST_CASE("structured values round-trip") {
    Value v = Value::tuple({Value::tensor({3}, {0.1, -2.5, 1e-9}), Value(std::int64_t{-3}),
                            Value::tuple({Value(true), Value(0.3)})});
    CHECK(identical(parse_value(to_string(v)), v));
}

TEST_CASE("gadd and zeros_like follow the value structure") {
    Value a = Value::tuple({Value(1.0), Value::tensor({2}, {1, 2})});
    Value b = Value::tuple({Value(2.0), Value::tensor({2}, {3, 4})});
    Value s = gadd(a, b);
    CHECK(s.as_tuple()[0].as_float() == 3.0);
    CHECK(s.as_tuple()[1].as_tensor().data == std::vector<double>{4, 6});
    Value z = zeros_like(a);
    CHECK(identical(gadd(a, z), a));
    CHECK(identical(gadd(z, a), a));
}

TEST_CASE("env sensitivities treat missing keys as zero") {
    Value a = Value::env({{1, Value(2.0)}});
    Value b = Value::env({{1, Value(3.0)}, {2, Value(1.0)}});
    auto s = gadd(a, b).as_env();
    CHECK(s.at(1).as_float() == 5.0);
    CHECK(s.at(2).as_float() == 1.0);
    CHECK(identical(gadd(Value::env(), a), a));
}

TEST_CASE("signatures parse") {
    auto sig = parse_signature("f64, t[2,3], (i64, bool)");
    REQUIRE(sig.size() == 3);
    CHECK(to_string(sig[0]) == "f64");
    CHECK(sig[1].is(AbstractKind::Tensor));
    CHECK(sig[1].shape == std::vector<std::int64_t>{2, 3});
    CHECK(sig[2].is(AbstractKind::Tuple));
    CHECK(parse_signature("").empty());
    CHECK_THROWS_AS(parse_signature("f32"), Error);
    CHECK_THROWS_AS(parse_signature("t[2"), Error);
}

TEST_CASE("join") {
    auto f = AbstractValue::f64();
    CHECK(join(AbstractValue::bottom(), f) == f);
    CHECK(join(f, AbstractValue::bottom()) == f);
    CHECK(join(AbstractValue::f64(1.0), AbstractValue::f64(2.0)) == f);
    CHECK(join(AbstractValue::f64(1.0), AbstractValue::f64(1.0)) == AbstractValue::f64(1.0));
    CHECK_THROWS_AS(join(f, AbstractValue::i64()), Error);
    CHECK_THROWS_AS(join(AbstractValue::tensor({2}), AbstractValue::tensor({3})), Error);
}

TEST_CASE("broaden drops constants but keeps shape tuples") {
    CHECK(broaden(AbstractValue::f64(2.0)) == AbstractValue::f64());
    auto shape = AbstractValue::tuple({AbstractValue::i64(2), AbstractValue::i64(3)});
    CHECK(broaden(shape) == shape);
    auto mixed = AbstractValue::tuple({AbstractValue::i64(2), AbstractValue::f64(3.0)});
    CHECK(broaden(mixed) == AbstractValue::tuple({AbstractValue::i64(), AbstractValue::f64()}));
}

TEST_CASE("primitive shape rules") {
    std::vector<AbstractValue> mm{AbstractValue::tensor({2, 3}), AbstractValue::tensor({3, 4})};
    CHECK(to_string(primitive_rule(Primitive::Matmul, mm)) == "t[2,4]");
    std::vector<AbstractValue> bad{AbstractValue::tensor({2, 3}), AbstractValue::tensor({2, 4})};
    CHECK_THROWS_AS(primitive_rule(Primitive::Matmul, bad), Error);
    std::vector<AbstractValue> tr{AbstractValue::tensor({2, 3})};
    CHECK(to_string(primitive_rule(Primitive::Transpose, tr)) == "t[3,2]");
    CHECK(to_string(primitive_rule(Primitive::ReduceSum, tr)) == "f64");
    std::vector<AbstractValue> consts{AbstractValue::f64(2.0), AbstractValue::f64(3.0)};
    CHECK(primitive_rule(Primitive::Mul, consts) == AbstractValue::f64(6.0));
}

TEST_CASE("abstract_of and matches agree") {
    Value v = Value::tuple({Value(1.0), Value::tensor({2}, {1, 2})});
    CHECK(matches(v, abstract_of(v)));
    CHECK(matches(v, abstract_of(v, false)));
    CHECK_FALSE(matches(Value(1.0), AbstractValue::i64()));
}
