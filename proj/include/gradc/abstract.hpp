#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/ids.hpp"
#include "gradc/primitives.hpp"
#include "gradc/value.hpp"

namespace gradc {

enum class AbstractKind : std::uint8_t { Bottom, Float, Int, Bool, Tensor, Tuple, Func, Env };

/// A function an abstract value may evaluate to. `context` identifies the
/// inference context the closure was created in (-1 for none).
struct FuncRef {
    GraphId graph;
    std::optional<Primitive> prim;
    int context = -1;

    static FuncRef of_graph(GraphId g, int context) { return {g, std::nullopt, context}; }
    static FuncRef of_prim(Primitive p) { return {GraphId(), p, -1}; }

    auto operator<=>(const FuncRef&) const = default;
};

/// Element of the inference lattice. Bottom means "no information yet"
/// (an in-progress recursive call) and is the identity of join.
struct AbstractValue {
    AbstractKind kind = AbstractKind::Bottom;
    std::optional<Value> constant; // scalars only
    std::vector<std::int64_t> shape;
    std::vector<AbstractValue> items;
    std::set<FuncRef> funcs;

    static AbstractValue bottom() { return {}; }
    static AbstractValue f64(std::optional<double> c = std::nullopt);
    static AbstractValue i64(std::optional<std::int64_t> c = std::nullopt);
    static AbstractValue boolean(std::optional<bool> c = std::nullopt);
    static AbstractValue tensor(std::vector<std::int64_t> shape);
    static AbstractValue tuple(std::vector<AbstractValue> items);
    static AbstractValue func(std::set<FuncRef> refs);
    static AbstractValue env();

    bool is(AbstractKind k) const { return kind == k; }
    bool is_bottom() const { return kind == AbstractKind::Bottom; }
    /// Contains Bottom anywhere.
    bool incomplete() const;

    bool operator==(const AbstractValue&) const;
};

/// `f64`, `i64`, `bool`, `t[2,3]`, `(f64, t[3])`, `fn`, `env`.
std::string to_string(const AbstractValue& a);

/// Parses one type or a comma separated list of them, as accepted by
/// `--args-sig`.
std::vector<AbstractValue> parse_signature(std::string_view text);

/// Drops known constants recursively.
AbstractValue erase_constants(const AbstractValue& a);
/// Drops the constants that would make call-site signatures unbounded.
/// Tuples made only of ints are kept intact because they carry shapes.
AbstractValue broaden(const AbstractValue& a);

/// Least upper bound. Fails with a message naming both sides when the
/// values have different types.
AbstractValue join(const AbstractValue& a, const AbstractValue& b);

/// Abstraction of a concrete value. Function values become opaque Func
/// values without references.
AbstractValue abstract_of(const Value& v, bool keep_constants = true);

/// Whether `v` is an instance of `a`. Functions and envs match loosely.
bool matches(const Value& v, const AbstractValue& a);

/// Transfer function for every primitive except `grad`, which needs the
/// inferrer. Any Bottom argument yields Bottom.
AbstractValue primitive_rule(Primitive p, std::span<const AbstractValue> args);

} // namespace gradc
