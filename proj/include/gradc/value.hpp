#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "gradc/ids.hpp"
#include "gradc/primitives.hpp"

namespace gradc {

class Value;
struct Frame;

/// Dense row-major float64 tensor. `data.size()` is the product of `shape`.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> data;

    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
};

std::int64_t shape_size(std::span<const std::int64_t> shape);

struct TupleData {
    std::vector<Value> items;
};

/// Sensitivities of a closure's free variables, keyed by per-node symbols.
/// A missing key stands for a zero of the appropriate structure.
struct EnvData {
    std::map<std::int64_t, Value> entries;
};

/// A reference to a graph as a constant; becomes a closure when evaluated.
struct GraphRef {
    GraphId graph;
    friend bool operator==(GraphRef, GraphRef) = default;
};

struct Closure {
    GraphId graph;
    std::shared_ptr<Frame> frame;
};

enum class ValueKind { Float, Int, Bool, Tensor, Tuple, Env, Primitive, GraphRef, Closure };

class Value {
public:
    using Storage = std::variant<double, std::int64_t, bool, std::shared_ptr<const Tensor>,
                                 std::shared_ptr<const TupleData>, std::shared_ptr<const EnvData>, Primitive,
                                 GraphRef, std::shared_ptr<const Closure>>;

    Value() : storage_(0.0) {}
    Value(double v) : storage_(v) {}
    Value(std::int64_t v) : storage_(v) {}
    Value(bool v) : storage_(v) {}
    Value(Primitive p) : storage_(p) {}
    Value(GraphRef g) : storage_(g) {}

    static Value tensor(std::vector<std::int64_t> shape, std::vector<double> data);
    static Value tuple(std::vector<Value> items);
    static Value env(std::map<std::int64_t, Value> entries = {});
    static Value closure(GraphId graph, std::shared_ptr<Frame> frame);

    ValueKind kind() const { return static_cast<ValueKind>(storage_.index()); }
    bool is(ValueKind k) const { return kind() == k; }
    bool is_callable() const {
        return is(ValueKind::Primitive) || is(ValueKind::GraphRef) || is(ValueKind::Closure);
    }

    double as_float() const;
    std::int64_t as_int() const;
    bool as_bool() const;
    const Tensor& as_tensor() const;
    const std::vector<Value>& as_tuple() const;
    const std::map<std::int64_t, Value>& as_env() const;
    Primitive as_primitive() const;
    GraphRef as_graph_ref() const;
    const Closure& as_closure() const;

    const Storage& storage() const { return storage_; }

private:
    Storage storage_;
};

const char* kind_name(ValueKind kind);

/// Structural identity: floats compare bit-for-bit, closures by identity.
bool identical(const Value& a, const Value& b);
std::size_t value_hash(const Value& v);

/// True when the value holds no closures, graph references or primitives.
bool is_plain_data(const Value& v);
/// True when every float in the value is finite.
bool all_finite(const Value& v);

/// Structural sensitivity addition; absent env keys act as zero.
Value gadd(const Value& a, const Value& b);
/// Additive identity with the structure of `v`'s sensitivity.
Value zeros_like(const Value& v);

std::string format_float(double v);
/// Literal syntax shared by the CLI and the textual IR: `2.0`, `true`,
/// `7i`, `t[2,2](1,2,3,4)`, `(a, b)`, `env{3: 1.0}`.
std::string to_string(const Value& v);

/// Parses the literal syntax above. Bare integers are read as floats.
Value parse_value(std::string_view text);
/// Parses one literal starting at `pos` (after skipping blanks) and advances
/// `pos` past it. Throws on malformed input.
Value parse_value_prefix(std::string_view text, std::size_t& pos);

} // namespace gradc
