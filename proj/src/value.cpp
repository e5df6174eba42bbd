#include "gradc/value.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>

#include <fmt/core.h>

#include "gradc/error.hpp"

namespace gradc {

const char* stage_name(Stage stage) {
    switch (stage) {
        case Stage::Parse: return "parse";
        case Stage::Lower: return "lower";
        case Stage::Ir: return "ir";
        case Stage::Infer: return "infer";
        case Stage::Ad: return "ad";
        case Stage::Opt: return "opt";
        case Stage::Vm: return "vm";
        case Stage::Cli: return "cli";
    }
    return "?";
}

Error::Error(Stage stage, std::string message, SourceLoc loc, bool internal)
    : std::runtime_error(loc.known() ? fmt::format("[{}] {}:{}: {}", stage_name(stage), loc.line, loc.column, message)
                                     : fmt::format("[{}] {}", stage_name(stage), message)),
      stage_(stage), loc_(loc), internal_(internal), message_(std::move(message)) {}

void fail(Stage stage, std::string message, SourceLoc loc) { throw Error(stage, std::move(message), loc); }

void internal_error(Stage stage, std::string message) { throw Error(stage, std::move(message), {}, true); }

std::int64_t shape_size(std::span<const std::int64_t> shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

Value Value::tensor(std::vector<std::int64_t> shape, std::vector<double> data) {
    for (auto d : shape)
        if (d < 0) fail(Stage::Vm, "negative tensor dimension");
    if (shape_size(shape) != static_cast<std::int64_t>(data.size()))
        fail(Stage::Vm, fmt::format("tensor data has {} elements, shape needs {}", data.size(), shape_size(shape)));
    Value v;
    v.storage_ = std::make_shared<const Tensor>(Tensor{std::move(shape), std::move(data)});
    return v;
}

Value Value::tuple(std::vector<Value> items) {
    Value v;
    v.storage_ = std::make_shared<const TupleData>(TupleData{std::move(items)});
    return v;
}

Value Value::env(std::map<std::int64_t, Value> entries) {
    Value v;
    v.storage_ = std::make_shared<const EnvData>(EnvData{std::move(entries)});
    return v;
}

Value Value::closure(GraphId graph, std::shared_ptr<Frame> frame) {
    Value v;
    v.storage_ = std::make_shared<const Closure>(Closure{graph, std::move(frame)});
    return v;
}

namespace {
[[noreturn]] void wrong_kind(const char* wanted, const Value& v) {
    fail(Stage::Vm, fmt::format("expected {}, got {}", wanted, kind_name(v.kind())));
}
} // namespace

double Value::as_float() const {
    if (auto p = std::get_if<double>(&storage_)) return *p;
    wrong_kind("Float64", *this);
}
std::int64_t Value::as_int() const {
    if (auto p = std::get_if<std::int64_t>(&storage_)) return *p;
    wrong_kind("Int64", *this);
}
bool Value::as_bool() const {
    if (auto p = std::get_if<bool>(&storage_)) return *p;
    wrong_kind("Bool", *this);
}
const Tensor& Value::as_tensor() const {
    if (auto p = std::get_if<std::shared_ptr<const Tensor>>(&storage_)) return **p;
    wrong_kind("Tensor", *this);
}
const std::vector<Value>& Value::as_tuple() const {
    if (auto p = std::get_if<std::shared_ptr<const TupleData>>(&storage_)) return (*p)->items;
    wrong_kind("Tuple", *this);
}
const std::map<std::int64_t, Value>& Value::as_env() const {
    if (auto p = std::get_if<std::shared_ptr<const EnvData>>(&storage_)) return (*p)->entries;
    wrong_kind("SensEnv", *this);
}
Primitive Value::as_primitive() const {
    if (auto p = std::get_if<Primitive>(&storage_)) return *p;
    wrong_kind("Primitive", *this);
}
GraphRef Value::as_graph_ref() const {
    if (auto p = std::get_if<GraphRef>(&storage_)) return *p;
    wrong_kind("graph reference", *this);
}
const Closure& Value::as_closure() const {
    if (auto p = std::get_if<std::shared_ptr<const Closure>>(&storage_)) return **p;
    wrong_kind("Closure", *this);
}

const char* kind_name(ValueKind kind) {
    switch (kind) {
        case ValueKind::Float: return "Float64";
        case ValueKind::Int: return "Int64";
        case ValueKind::Bool: return "Bool";
        case ValueKind::Tensor: return "Tensor";
        case ValueKind::Tuple: return "Tuple";
        case ValueKind::Env: return "SensEnv";
        case ValueKind::Primitive: return "Primitive";
        case ValueKind::GraphRef: return "GraphRef";
        case ValueKind::Closure: return "Closure";
    }
    return "?";
}

namespace {
bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }
} // namespace

bool identical(const Value& a, const Value& b) {
    if (a.kind() != b.kind()) return false;
    switch (a.kind()) {
        case ValueKind::Float: return same_bits(a.as_float(), b.as_float());
        case ValueKind::Int: return a.as_int() == b.as_int();
        case ValueKind::Bool: return a.as_bool() == b.as_bool();
        case ValueKind::Tensor: {
            const auto& x = a.as_tensor();
            const auto& y = b.as_tensor();
            if (x.shape != y.shape) return false;
            for (std::size_t i = 0; i < x.data.size(); ++i)
                if (!same_bits(x.data[i], y.data[i])) return false;
            return true;
        }
        case ValueKind::Tuple: {
            const auto& x = a.as_tuple();
            const auto& y = b.as_tuple();
            if (x.size() != y.size()) return false;
            for (std::size_t i = 0; i < x.size(); ++i)
                if (!identical(x[i], y[i])) return false;
            return true;
        }
        case ValueKind::Env: {
            const auto& x = a.as_env();
            const auto& y = b.as_env();
            if (x.size() != y.size()) return false;
            for (auto ix = x.begin(), iy = y.begin(); ix != x.end(); ++ix, ++iy)
                if (ix->first != iy->first || !identical(ix->second, iy->second)) return false;
            return true;
        }
        case ValueKind::Primitive: return a.as_primitive() == b.as_primitive();
        case ValueKind::GraphRef: return a.as_graph_ref() == b.as_graph_ref();
        case ValueKind::Closure: return &a.as_closure() == &b.as_closure();
    }
    return false;
}

std::size_t value_hash(const Value& v) {
    auto mix = [](std::size_t h, std::size_t x) { return h ^ (x + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)); };
    std::size_t h = static_cast<std::size_t>(v.kind());
    switch (v.kind()) {
        case ValueKind::Float: {
            double d = v.as_float();
            std::uint64_t bits;
            std::memcpy(&bits, &d, sizeof bits);
            return mix(h, std::hash<std::uint64_t>{}(bits));
        }
        case ValueKind::Int: return mix(h, std::hash<std::int64_t>{}(v.as_int()));
        case ValueKind::Bool: return mix(h, v.as_bool());
        case ValueKind::Tensor: return mix(h, v.as_tensor().data.size());
        case ValueKind::Tuple:
            for (const auto& item : v.as_tuple()) h = mix(h, value_hash(item));
            return h;
        case ValueKind::Env:
            for (const auto& [k, item] : v.as_env()) h = mix(mix(h, k), value_hash(item));
            return h;
        case ValueKind::Primitive: return mix(h, static_cast<std::size_t>(v.as_primitive()));
        case ValueKind::GraphRef: return mix(h, v.as_graph_ref().graph.value);
        case ValueKind::Closure: return mix(h, reinterpret_cast<std::uintptr_t>(&v.as_closure()));
    }
    return h;
}

bool is_plain_data(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Tuple:
            for (const auto& item : v.as_tuple())
                if (!is_plain_data(item)) return false;
            return true;
        case ValueKind::Env:
            for (const auto& [k, item] : v.as_env())
                if (!is_plain_data(item)) return false;
            return true;
        case ValueKind::Primitive:
        case ValueKind::GraphRef:
        case ValueKind::Closure: return false;
        default: return true;
    }
}

bool all_finite(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Float: return std::isfinite(v.as_float());
        case ValueKind::Tensor:
            for (double d : v.as_tensor().data)
                if (!std::isfinite(d)) return false;
            return true;
        case ValueKind::Tuple:
            for (const auto& item : v.as_tuple())
                if (!all_finite(item)) return false;
            return true;
        case ValueKind::Env:
            for (const auto& [k, item] : v.as_env())
                if (!all_finite(item)) return false;
            return true;
        default: return true;
    }
}

namespace {
bool is_function_like(const Value& v) { return v.is_callable() || v.is(ValueKind::Env); }
} // namespace

Value gadd(const Value& a, const Value& b) {
    if (is_function_like(a) && is_function_like(b)) {
        // The sensitivity of a function is its free-variable env; a bare
        // primitive or closed graph contributes the empty env.
        if (!a.is(ValueKind::Env)) return b.is(ValueKind::Env) ? b : Value::env();
        if (!b.is(ValueKind::Env)) return a;
        auto merged = a.as_env();
        for (const auto& [key, item] : b.as_env()) {
            auto it = merged.find(key);
            if (it == merged.end())
                merged.emplace(key, item);
            else
                it->second = gadd(it->second, item);
        }
        return Value::env(std::move(merged));
    }
    if (a.kind() != b.kind())
        fail(Stage::Vm, fmt::format("gadd: structure mismatch ({} vs {})", kind_name(a.kind()), kind_name(b.kind())));
    switch (a.kind()) {
        case ValueKind::Float: return a.as_float() + b.as_float();
        case ValueKind::Int: return a.as_int() + b.as_int();
        case ValueKind::Bool: return false;
        case ValueKind::Tensor: {
            const auto& x = a.as_tensor();
            const auto& y = b.as_tensor();
            if (x.shape != y.shape) fail(Stage::Vm, "gadd: tensor shape mismatch");
            std::vector<double> out(x.data.size());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data[i] + y.data[i];
            return Value::tensor(x.shape, std::move(out));
        }
        case ValueKind::Tuple: {
            const auto& x = a.as_tuple();
            const auto& y = b.as_tuple();
            if (x.size() != y.size()) fail(Stage::Vm, "gadd: tuple length mismatch");
            std::vector<Value> out;
            out.reserve(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) out.push_back(gadd(x[i], y[i]));
            return Value::tuple(std::move(out));
        }
        default: fail(Stage::Vm, fmt::format("gadd: unsupported value {}", kind_name(a.kind())));
    }
}

Value zeros_like(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Float: return 0.0;
        case ValueKind::Int: return std::int64_t{0};
        case ValueKind::Bool: return false;
        case ValueKind::Tensor: {
            const auto& t = v.as_tensor();
            return Value::tensor(t.shape, std::vector<double>(t.data.size(), 0.0));
        }
        case ValueKind::Tuple: {
            std::vector<Value> out;
            for (const auto& item : v.as_tuple()) out.push_back(zeros_like(item));
            return Value::tuple(std::move(out));
        }
        case ValueKind::Env:
        case ValueKind::Primitive:
        case ValueKind::GraphRef:
        case ValueKind::Closure: return Value::env();
    }
    return 0.0;
}

std::string format_float(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    std::string s = buf;
    if (s.find_first_of(".e") == std::string::npos) s += ".0";
    return s;
}

namespace {
std::string format_element(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}
} // namespace

std::string to_string(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Float: return format_float(v.as_float());
        case ValueKind::Int: return fmt::format("{}i", v.as_int());
        case ValueKind::Bool: return v.as_bool() ? "true" : "false";
        case ValueKind::Tensor: {
            const auto& t = v.as_tensor();
            std::string s = "t[";
            for (std::size_t i = 0; i < t.shape.size(); ++i) s += (i ? "," : "") + std::to_string(t.shape[i]);
            s += "](";
            for (std::size_t i = 0; i < t.data.size(); ++i) s += (i ? "," : "") + format_element(t.data[i]);
            return s + ")";
        }
        case ValueKind::Tuple: {
            const auto& items = v.as_tuple();
            std::string s = "(";
            for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + to_string(items[i]);
            if (items.size() == 1) s += ",";
            return s + ")";
        }
        case ValueKind::Env: {
            std::string s = "env{";
            bool first = true;
            for (const auto& [k, item] : v.as_env()) {
                s += fmt::format("{}{}: {}", first ? "" : ", ", k, to_string(item));
                first = false;
            }
            return s + "}";
        }
        case ValueKind::Primitive: return std::string(primitive_name(v.as_primitive()));
        case ValueKind::GraphRef: return fmt::format("@g{}", v.as_graph_ref().graph.value);
        case ValueKind::Closure: return fmt::format("<closure g{}>", v.as_closure().graph.value);
    }
    return "?";
}

namespace {

class LiteralReader {
public:
    LiteralReader(std::string_view text, std::size_t pos) : text_(text), pos_(pos) {}

    std::size_t pos() const { return pos_; }

    Value read() {
        skip();
        if (pos_ >= text_.size()) error("unexpected end of literal");
        char c = text_[pos_];
        if (c == '(') return read_tuple();
        if (starts_with("true")) return advance(4), Value(true);
        if (starts_with("false")) return advance(5), Value(false);
        if (starts_with("env{")) return read_env();
        if (c == 't' && peek(1) == '[') return read_tensor();
        return read_number();
    }

private:
    [[noreturn]] void error(const std::string& what) const {
        fail(Stage::Cli, fmt::format("bad value literal '{}': {}", std::string(text_), what));
    }

    char peek(std::size_t off = 0) const { return pos_ + off < text_.size() ? text_[pos_ + off] : '\0'; }
    bool starts_with(std::string_view s) const { return text_.substr(pos_).starts_with(s); }
    void advance(std::size_t n) { pos_ += n; }
    void skip() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }
    void expect(char c) {
        skip();
        if (peek() != c) error(fmt::format("expected '{}'", c));
        ++pos_;
    }

    double read_double() {
        skip();
        bool neg = false;
        if (peek() == '-' || peek() == '+') neg = text_[pos_++] == '-';
        if (starts_with("nan")) return advance(3), std::nan("");
        if (starts_with("inf")) return advance(3), neg ? -HUGE_VAL : HUGE_VAL;
        std::size_t start = pos_;
        while (std::isdigit(static_cast<unsigned char>(peek())) || peek() == '.' || peek() == 'e' || peek() == 'E' ||
               ((peek() == '-' || peek() == '+') && (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E')))
            ++pos_;
        if (start == pos_) error("expected a number");
        std::string digits(text_.substr(start, pos_ - start));
        char* end = nullptr;
        double d = std::strtod(digits.c_str(), &end);
        if (end != digits.c_str() + digits.size()) error("malformed number");
        return neg ? -d : d;
    }

    Value read_number() {
        skip();
        std::size_t start = pos_;
        double d = read_double();
        if (peek() == 'i') {
            std::string_view raw = text_.substr(start, pos_ - start);
            if (raw.find_first_of(".eEna") != std::string_view::npos) error("integer literal with fraction");
            ++pos_;
            return static_cast<std::int64_t>(d);
        }
        return d;
    }

    Value read_tuple() {
        expect('(');
        std::vector<Value> items;
        skip();
        if (peek() == ')') return ++pos_, Value::tuple({});
        while (true) {
            items.push_back(read());
            skip();
            if (peek() == ',') {
                ++pos_;
                skip();
                if (peek() == ')') break;
                continue;
            }
            break;
        }
        expect(')');
        return Value::tuple(std::move(items));
    }

    Value read_tensor() {
        advance(1);
        expect('[');
        std::vector<std::int64_t> shape;
        skip();
        if (peek() != ']') {
            while (true) {
                double d = read_double();
                if (d < 0 || d != std::floor(d)) error("bad tensor dimension");
                shape.push_back(static_cast<std::int64_t>(d));
                skip();
                if (peek() != ',') break;
                ++pos_;
            }
        }
        expect(']');
        expect('(');
        std::vector<double> data;
        skip();
        if (peek() != ')') {
            while (true) {
                data.push_back(read_double());
                skip();
                if (peek() != ',') break;
                ++pos_;
            }
        }
        expect(')');
        if (shape_size(shape) != static_cast<std::int64_t>(data.size())) error("element count does not match shape");
        return Value::tensor(std::move(shape), std::move(data));
    }

    Value read_env() {
        advance(4);
        std::map<std::int64_t, Value> entries;
        skip();
        if (peek() == '}') return ++pos_, Value::env();
        while (true) {
            double key = read_double();
            expect(':');
            entries[static_cast<std::int64_t>(key)] = read();
            skip();
            if (peek() != ',') break;
            ++pos_;
        }
        expect('}');
        return Value::env(std::move(entries));
    }

    std::string_view text_;
    std::size_t pos_;
};

} // namespace

Value parse_value_prefix(std::string_view text, std::size_t& pos) {
    LiteralReader reader(text, pos);
    Value v = reader.read();
    pos = reader.pos();
    return v;
}

Value parse_value(std::string_view text) {
    std::size_t pos = 0;
    Value v = parse_value_prefix(text, pos);
    while (pos < text.size() && std::isspace(static_cast<unsigned char>(text[pos]))) ++pos;
    if (pos != text.size()) fail(Stage::Cli, fmt::format("bad value literal '{}': trailing characters", text));
    return v;
}

} // namespace gradc
