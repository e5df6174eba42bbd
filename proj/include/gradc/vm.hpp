#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <unordered_map>
#include <vector>

#include "gradc/ir.hpp"
#include "gradc/value.hpp"

namespace gradc {

class GradContext;

/// One graph activation. Free variables are found by walking `parent`
/// to the activation of the graph that owns them.
struct Frame {
    GraphId graph;
    std::shared_ptr<Frame> parent;
    std::vector<Value> slots; // parameters first, then scheduled apply nodes
};

struct VmOptions {
    std::size_t recursion_limit = 100000;
    /// When set, every graph is executed in a random topological order
    /// drawn from this seed instead of the canonical ANF schedule.
    std::optional<std::uint64_t> shuffle_seed;
};

/// Reference interpreter. Runtime `grad` of a function value builds the
/// wrapper graph on demand, which is why the store is mutable.
class Vm {
public:
    explicit Vm(GraphStore& store, VmOptions options = {}, GradContext* grad = nullptr);
    ~Vm();

    Value run(GraphId g, std::span<const Value> args);
    Value call(const Value& fn, std::span<const Value> args);

    /// Activations entered so far, including primitive calls.
    std::uint64_t steps() const { return steps_; }

private:
    struct Plan {
        std::vector<NodeId> schedule;
        std::unordered_map<NodeId, std::uint32_t> slot;
        NodeId ret;
        std::size_t arity = 0;
        bool closed = true;
        std::optional<GraphId> parent;
    };
    struct Activation {
        const Plan* plan;
        std::shared_ptr<Frame> frame;
        std::size_t pc = 0;
        std::uint32_t pending = 0;
    };

    const Plan& plan(GraphId g);
    Value value_of(NodeId n, const std::shared_ptr<Frame>& frame);
    Value make_closure(GraphId g, const std::shared_ptr<Frame>& frame);
    /// Calls a primitive immediately or pushes an activation for a graph.
    std::optional<Value> enter(const Value& fn, std::vector<Value> args, std::vector<Activation>& stack);
    Value runtime_grad(const Value& fn);

    GraphStore& store_;
    VmOptions options_;
    GradContext* grad_;
    std::unique_ptr<GradContext> owned_grad_;
    std::unordered_map<GraphId, std::unique_ptr<Plan>> plans_;
    std::optional<std::mt19937> rng_;
    std::uint64_t steps_ = 0;
};

Value run(GraphStore& store, GraphId g, std::span<const Value> args, VmOptions options = {});

/// Kernel semantics of every primitive except `grad`, which needs a store.
Value primitive_eval(Primitive p, std::span<const Value> args);

/// Central differences on argument `wrt`, coordinate by coordinate, with
/// step h = eps * (|x_i| + 1). Returns a value shaped like `args[wrt]`.
Value finite_diff_grad(GraphStore& store, GraphId g, std::span<const Value> args, std::size_t wrt, double eps = 1e-4);

} // namespace gradc
