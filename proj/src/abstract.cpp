#include "gradc/abstract.hpp"

#include <cctype>

#include <fmt/core.h>

#include "gradc/error.hpp"
#include "gradc/vm.hpp"

namespace gradc {

namespace {

using K = AbstractKind;

std::string shape_text(const std::vector<std::int64_t>& shape) {
    std::string out;
    for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
    return out.empty() ? "scalar" : out;
}

[[noreturn]] void type_error(Primitive p, std::span<const AbstractValue> args) {
    std::string kinds;
    for (std::size_t i = 0; i < args.size(); ++i) kinds += (i ? ", " : "") + to_string(args[i]);
    fail(Stage::Infer, fmt::format("{}: unsupported operand types ({})", primitive_name(p), kinds));
}

bool is_scalar(const AbstractValue& a) { return a.is(K::Float) || a.is(K::Int) || a.is(K::Bool); }
bool is_function_like(const AbstractValue& a) { return a.is(K::Func) || a.is(K::Env); }

AbstractValue elementwise(Primitive p, std::span<const AbstractValue> args, bool ints) {
    const auto& a = args[0];
    const auto& b = args[1];
    if (a.is(K::Float) && b.is(K::Float)) return AbstractValue::f64();
    if (ints && a.is(K::Int) && b.is(K::Int)) return AbstractValue::i64();
    if (a.is(K::Tensor) && b.is(K::Tensor)) {
        if (a.shape != b.shape)
            fail(Stage::Infer, fmt::format("{}: elementwise shape mismatch ({} vs {})", primitive_name(p),
                                           shape_text(a.shape), shape_text(b.shape)));
        return a;
    }
    type_error(p, args);
}

const AbstractValue& matrix(Primitive p, const AbstractValue& a) {
    if (!a.is(K::Tensor) || a.shape.size() != 2)
        fail(Stage::Infer, fmt::format("{}: expected a rank-2 tensor, got {}", primitive_name(p), to_string(a)));
    return a;
}

std::size_t known_index(Primitive p, const AbstractValue& t, const AbstractValue& i) {
    if (!t.is(K::Tuple) || !i.is(K::Int))
        fail(Stage::Infer, fmt::format("{}: expected (tuple, i64), got ({}, {})", primitive_name(p), to_string(t),
                                       to_string(i)));
    if (!i.constant) fail(Stage::Infer, fmt::format("{}: tuple index must be a known constant", primitive_name(p)));
    std::int64_t k = i.constant->as_int();
    if (k < 0 || static_cast<std::size_t>(k) >= t.items.size())
        fail(Stage::Infer,
             fmt::format("{}: index {} out of range for a {}-tuple", primitive_name(p), k, t.items.size()));
    return static_cast<std::size_t>(k);
}

/// Type of the sensitivity of a value of type `a`.
AbstractValue sensitivity(const AbstractValue& a) {
    switch (a.kind) {
        case K::Func:
        case K::Env: return AbstractValue::env();
        case K::Tuple: {
            std::vector<AbstractValue> items;
            for (const auto& x : a.items) items.push_back(sensitivity(x));
            return AbstractValue::tuple(std::move(items));
        }
        default: return erase_constants(a);
    }
}

AbstractValue zero_of(const AbstractValue& a) {
    switch (a.kind) {
        case K::Float: return AbstractValue::f64(0.0);
        case K::Int: return AbstractValue::i64();
        case K::Bool: return AbstractValue::boolean(false);
        case K::Tuple: {
            std::vector<AbstractValue> items;
            for (const auto& x : a.items) items.push_back(zero_of(x));
            return AbstractValue::tuple(std::move(items));
        }
        case K::Func:
        case K::Env: return AbstractValue::env();
        default: return a;
    }
}

bool all_known(std::span<const AbstractValue> args) {
    for (const auto& a : args)
        if (!a.constant) return false;
    return !args.empty();
}

class SigParser {
public:
    explicit SigParser(std::string_view text) : s_(text) {}

    std::vector<AbstractValue> list() {
        std::vector<AbstractValue> out;
        skip();
        if (pos_ == s_.size()) return out;
        out.push_back(type());
        skip();
        while (pos_ < s_.size() && s_[pos_] == ',') {
            ++pos_;
            out.push_back(type());
            skip();
        }
        if (pos_ != s_.size()) error("unexpected trailing text");
        return out;
    }

private:
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool eat(std::string_view w) {
        skip();
        if (s_.substr(pos_).starts_with(w)) {
            pos_ += w.size();
            return true;
        }
        return false;
    }
    [[noreturn]] void error(const std::string& msg) const {
        fail(Stage::Cli, fmt::format("bad type signature '{}' at offset {}: {}", s_, pos_, msg));
    }

    AbstractValue type() {
        if (eat("f64")) return AbstractValue::f64();
        if (eat("i64")) return AbstractValue::i64();
        if (eat("bool")) return AbstractValue::boolean();
        if (eat("t[")) {
            std::vector<std::int64_t> shape;
            skip();
            while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_]))) {
                std::int64_t d = 0;
                while (pos_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[pos_])))
                    d = d * 10 + (s_[pos_++] - '0');
                shape.push_back(d);
                if (!eat(",")) break;
                skip();
            }
            if (!eat("]")) error("expected ']'");
            return AbstractValue::tensor(std::move(shape));
        }
        if (eat("(")) {
            std::vector<AbstractValue> items;
            if (eat(")")) return AbstractValue::tuple({});
            items.push_back(type());
            while (eat(",")) {
                if (eat(")")) return AbstractValue::tuple(std::move(items));
                items.push_back(type());
            }
            if (!eat(")")) error("expected ')'");
            return AbstractValue::tuple(std::move(items));
        }
        error("expected f64, i64, bool, t[...] or a tuple");
    }

    std::string_view s_;
    std::size_t pos_ = 0;
};

} // namespace

AbstractValue AbstractValue::f64(std::optional<double> c) {
    AbstractValue a;
    a.kind = K::Float;
    if (c) a.constant = Value(*c);
    return a;
}
AbstractValue AbstractValue::i64(std::optional<std::int64_t> c) {
    AbstractValue a;
    a.kind = K::Int;
    if (c) a.constant = Value(*c);
    return a;
}
AbstractValue AbstractValue::boolean(std::optional<bool> c) {
    AbstractValue a;
    a.kind = K::Bool;
    if (c) a.constant = Value(*c);
    return a;
}
AbstractValue AbstractValue::tensor(std::vector<std::int64_t> shape) {
    AbstractValue a;
    a.kind = K::Tensor;
    a.shape = std::move(shape);
    return a;
}
AbstractValue AbstractValue::tuple(std::vector<AbstractValue> items) {
    AbstractValue a;
    a.kind = K::Tuple;
    a.items = std::move(items);
    return a;
}
AbstractValue AbstractValue::func(std::set<FuncRef> refs) {
    AbstractValue a;
    a.kind = K::Func;
    a.funcs = std::move(refs);
    return a;
}
AbstractValue AbstractValue::env() {
    AbstractValue a;
    a.kind = K::Env;
    return a;
}

bool AbstractValue::incomplete() const {
    if (is_bottom()) return true;
    for (const auto& x : items)
        if (x.incomplete()) return true;
    return false;
}

bool AbstractValue::operator==(const AbstractValue& o) const {
    if (kind != o.kind || shape != o.shape || items != o.items || funcs != o.funcs) return false;
    if (constant.has_value() != o.constant.has_value()) return false;
    return !constant || identical(*constant, *o.constant);
}

std::string to_string(const AbstractValue& a) {
    switch (a.kind) {
        case K::Bottom: return "bottom";
        case K::Float: return "f64";
        case K::Int: return "i64";
        case K::Bool: return "bool";
        case K::Tensor: {
            std::string out = "t[";
            for (std::size_t i = 0; i < a.shape.size(); ++i) out += (i ? "," : "") + std::to_string(a.shape[i]);
            return out + "]";
        }
        case K::Tuple: {
            std::string out = "(";
            for (std::size_t i = 0; i < a.items.size(); ++i) out += (i ? ", " : "") + to_string(a.items[i]);
            if (a.items.size() == 1) out += ",";
            return out + ")";
        }
        case K::Func: return "fn";
        case K::Env: return "env";
    }
    return "?";
}

std::vector<AbstractValue> parse_signature(std::string_view text) { return SigParser(text).list(); }

AbstractValue erase_constants(const AbstractValue& a) {
    AbstractValue out = a;
    out.constant.reset();
    for (auto& x : out.items) x = erase_constants(x);
    return out;
}

namespace {
bool is_shape_tuple(const AbstractValue& a) {
    if (!a.is(K::Tuple)) return false;
    for (const auto& x : a.items)
        if (!x.is(K::Int)) return false;
    return true;
}
} // namespace

AbstractValue broaden(const AbstractValue& a) {
    if (is_shape_tuple(a)) return a;
    AbstractValue out = a;
    out.constant.reset();
    for (auto& x : out.items) x = broaden(x);
    return out;
}

AbstractValue join(const AbstractValue& a, const AbstractValue& b) {
    if (a.is_bottom()) return b;
    if (b.is_bottom()) return a;
    if (is_function_like(a) && is_function_like(b)) {
        if (a.is(K::Func) && b.is(K::Func)) {
            AbstractValue out = a;
            out.funcs.insert(b.funcs.begin(), b.funcs.end());
            return out;
        }
        return AbstractValue::env();
    }
    auto mismatch = [&]() -> AbstractValue {
        fail(Stage::Infer, fmt::format("type disagreement ({} vs {})", to_string(a), to_string(b)));
    };
    if (a.kind != b.kind) return mismatch();
    switch (a.kind) {
        case K::Float:
        case K::Int:
        case K::Bool: {
            AbstractValue out = a;
            if (!(a.constant && b.constant && identical(*a.constant, *b.constant))) out.constant.reset();
            return out;
        }
        case K::Tensor:
            if (a.shape != b.shape) return mismatch();
            return a;
        case K::Tuple: {
            if (a.items.size() != b.items.size()) return mismatch();
            std::vector<AbstractValue> items;
            for (std::size_t i = 0; i < a.items.size(); ++i) items.push_back(join(a.items[i], b.items[i]));
            return AbstractValue::tuple(std::move(items));
        }
        default: return a;
    }
}

AbstractValue abstract_of(const Value& v, bool keep_constants) {
    switch (v.kind()) {
        case ValueKind::Float: return AbstractValue::f64(keep_constants ? std::optional(v.as_float()) : std::nullopt);
        case ValueKind::Int: return AbstractValue::i64(keep_constants ? std::optional(v.as_int()) : std::nullopt);
        case ValueKind::Bool: return AbstractValue::boolean(keep_constants ? std::optional(v.as_bool()) : std::nullopt);
        case ValueKind::Tensor: return AbstractValue::tensor(v.as_tensor().shape);
        case ValueKind::Tuple: {
            std::vector<AbstractValue> items;
            for (const auto& x : v.as_tuple()) items.push_back(abstract_of(x, keep_constants));
            return AbstractValue::tuple(std::move(items));
        }
        case ValueKind::Env: return AbstractValue::env();
        case ValueKind::Primitive: return AbstractValue::func({FuncRef::of_prim(v.as_primitive())});
        case ValueKind::GraphRef:
        case ValueKind::Closure: return AbstractValue::func({});
    }
    return {};
}

bool matches(const Value& v, const AbstractValue& a) {
    switch (a.kind) {
        case K::Bottom: return false;
        case K::Float: return v.is(ValueKind::Float);
        case K::Int: return v.is(ValueKind::Int);
        case K::Bool: return v.is(ValueKind::Bool);
        case K::Tensor: return v.is(ValueKind::Tensor) && v.as_tensor().shape == a.shape;
        case K::Tuple: {
            if (!v.is(ValueKind::Tuple) || v.as_tuple().size() != a.items.size()) return false;
            for (std::size_t i = 0; i < a.items.size(); ++i)
                if (!matches(v.as_tuple()[i], a.items[i])) return false;
            return true;
        }
        case K::Func:
        case K::Env: return v.is_callable() || v.is(ValueKind::Env);
    }
    return false;
}

AbstractValue primitive_rule(Primitive p, std::span<const AbstractValue> args) {
    const auto& info = primitive_info(p);
    if (info.arity >= 0 && static_cast<std::size_t>(info.arity) != args.size())
        fail(Stage::Infer, fmt::format("'{}' takes {} argument(s), got {}", info.name, info.arity, args.size()));
    if (p == Primitive::Switch) {
        const auto& c = args[0];
        if (c.is_bottom()) return AbstractValue::bottom();
        if (!c.is(K::Bool)) fail(Stage::Infer, fmt::format("switch: condition must be bool, got {}", to_string(c)));
        if (c.constant) return c.constant->as_bool() ? args[1] : args[2];
        try {
            return join(args[1], args[2]);
        } catch (const Error&) {
            fail(Stage::Infer, fmt::format("switch branch-type disagreement ({} vs {})", to_string(args[1]),
                                           to_string(args[2])));
        }
    }
    for (const auto& a : args)
        if (a.is_bottom()) return AbstractValue::bottom();

    if (is_foldable(p) && all_known(args)) {
        std::vector<Value> vals;
        for (const auto& a : args) vals.push_back(*a.constant);
        try {
            return abstract_of(primitive_eval(p, vals));
        } catch (const Error&) {
            // Reported below with inference's own wording.
        }
    }

    switch (p) {
        case Primitive::Add:
        case Primitive::Sub:
        case Primitive::Mul: return elementwise(p, args, true);
        case Primitive::Div: return elementwise(p, args, false);
        case Primitive::Pow:
            if (args[0].is(K::Float) && args[1].is(K::Float)) return AbstractValue::f64();
            type_error(p, args);
        case Primitive::Neg:
            if (args[0].is(K::Int)) return AbstractValue::i64();
            [[fallthrough]];
        case Primitive::Exp:
        case Primitive::Log:
            if (args[0].is(K::Float)) return AbstractValue::f64();
            if (args[0].is(K::Tensor)) return args[0];
            type_error(p, args);
        case Primitive::Lt:
        case Primitive::Gt:
        case Primitive::Le:
        case Primitive::Ge:
        case Primitive::Eq:
        case Primitive::Ne: {
            bool ok = (args[0].is(K::Float) && args[1].is(K::Float)) || (args[0].is(K::Int) && args[1].is(K::Int)) ||
                      ((p == Primitive::Eq || p == Primitive::Ne) && args[0].is(K::Bool) && args[1].is(K::Bool));
            if (!ok) type_error(p, args);
            return AbstractValue::boolean();
        }
        case Primitive::Matmul: {
            const auto& a = matrix(p, args[0]);
            const auto& b = matrix(p, args[1]);
            if (a.shape[1] != b.shape[0])
                fail(Stage::Infer, fmt::format("matmul: inner dimensions differ ({} @ {})", shape_text(a.shape),
                                               shape_text(b.shape)));
            return AbstractValue::tensor({a.shape[0], b.shape[1]});
        }
        case Primitive::Transpose: {
            const auto& a = matrix(p, args[0]);
            return AbstractValue::tensor({a.shape[1], a.shape[0]});
        }
        case Primitive::ReduceSum:
            if (!args[0].is(K::Tensor)) type_error(p, args);
            return AbstractValue::f64();
        case Primitive::Distribute: {
            if (!args[0].is(K::Float) || !args[1].is(K::Tuple)) type_error(p, args);
            std::vector<std::int64_t> shape;
            for (const auto& d : args[1].items) {
                if (!d.is(K::Int)) type_error(p, args);
                if (!d.constant) fail(Stage::Infer, "distribute: target shape must be known");
                if (d.constant->as_int() < 0) fail(Stage::Infer, "distribute: shape entries must be non-negative");
                shape.push_back(d.constant->as_int());
            }
            return AbstractValue::tensor(std::move(shape));
        }
        case Primitive::Shape: {
            if (!args[0].is(K::Tensor)) type_error(p, args);
            std::vector<AbstractValue> items;
            for (auto d : args[0].shape) items.push_back(AbstractValue::i64(d));
            return AbstractValue::tuple(std::move(items));
        }
        case Primitive::MakeTuple: return AbstractValue::tuple({args.begin(), args.end()});
        case Primitive::TupleGetItem: return args[0].items[known_index(p, args[0], args[1])];
        case Primitive::TupleSetItem: {
            auto out = args[0];
            out.items[known_index(p, args[0], args[1])] = args[2];
            return out;
        }
        case Primitive::GAdd: {
            const auto& a = args[0];
            const auto& b = args[1];
            if (is_function_like(a) && is_function_like(b)) return AbstractValue::env();
            if (is_scalar(a) && a.kind == b.kind) return erase_constants(a);
            try {
                return erase_constants(join(sensitivity(a), sensitivity(b)));
            } catch (const Error&) {
                type_error(p, args);
            }
        }
        case Primitive::ZerosLike: return zero_of(args[0]);
        case Primitive::EnvGetItem:
            if (!is_function_like(args[0])) type_error(p, args);
            return sensitivity(args[2]);
        case Primitive::EnvSetItem:
            if (!is_function_like(args[0])) type_error(p, args);
            return AbstractValue::env();
        case Primitive::Switch:
        case Primitive::Grad: internal_error(Stage::Infer, "primitive handled by the inferrer");
        case Primitive::Dead: return AbstractValue::bottom();
    }
    return {};
}

} // namespace gradc
