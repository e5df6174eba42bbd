#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "gradc/ir.hpp"

namespace gradc {

struct AdOptions {
    /// Test fixture for the gradient checker: doubles the sensitivity of
    /// the first argument of this primitive's adjoint.
    std::optional<Primitive> fault_adjoint;
};

/// Closure-based reverse-mode transformation. For a graph f it builds
/// ▶f, which returns (f's value, ◀f), where the backpropagator ◀f maps an
/// output sensitivity to (env of free-variable sensitivities, one
/// sensitivity per parameter). Results are memoized, so shared callees
/// are transformed once and transforming twice yields the same graph.
class GradContext {
public:
    explicit GradContext(GraphStore& store, AdOptions options = {});

    GraphStore& store() { return store_; }
    const AdOptions& options() const { return options_; }

    /// ▶g. Graphs nested in g are transformed along with it; free
    /// variables owned outside g are treated as constants.
    GraphId jtransform(GraphId g);

    /// Wrapper computing the derivative of g's f64 result with respect to
    /// parameter `wrt`, seeding the backpropagator with 1.0.
    GraphId grad_wrapper(GraphId g, std::size_t wrt = 0);

    /// A graph that forwards its arguments to `p`, for `grad(p)`.
    GraphId primitive_graph(Primitive p);

    /// ▶p for one call shape. A `baked` second argument (pow exponent,
    /// tuple index, env key) is used as a constant inside ▶p and ◀p; for
    /// pow this also means the exponent's sensitivity is a structural zero.
    GraphId primitive_j(Primitive p, std::size_t arity, const std::optional<Value>& baked = std::nullopt);

    bool is_wrapper(GraphId w) const { return wrapper_calls_.contains(w); }
    /// The `▶g(args)` call inside a grad wrapper. Element 0 of its result is
    /// the primal output, which must be an f64 scalar.
    std::optional<NodeId> wrapper_call(GraphId w) const;

private:
    struct Member {
        GraphId graph;
        int depth = 0;
        std::vector<NodeId> schedule;
        std::vector<NodeId> free_variables;
    };
    struct Family {
        GraphId root;
        std::vector<Member> members;
        std::unordered_map<GraphId, GraphId> images; // member -> ▶member
        std::unordered_map<NodeId, NodeId> forward;  // primal node -> forward value
        std::unordered_map<NodeId, NodeId> backprop; // primal apply -> its backpropagator
        std::unordered_map<GraphId, GraphId> backward; // member -> ◀member
    };

    void plan(GraphId root, std::vector<Family>& out, std::vector<GraphId>& work);
    const std::vector<NodeId>& closure_fvs(GraphId h);
    NodeId forward_of(Family& fam, NodeId n);
    NodeId forward_callee(Family& fam, NodeId y);
    void build_forward(Family& fam, const Member& m);
    void build_backward(Family& fam, const Member& m);

    GraphStore& store_;
    AdOptions options_;
    std::map<std::pair<GraphId, GraphId>, GraphId> memo_; // (family root, graph) -> ▶graph
    std::unordered_map<GraphId, std::vector<NodeId>> fvs_;
    std::map<std::tuple<Primitive, std::size_t, std::string>, GraphId> prim_j_;
    std::map<Primitive, GraphId> prim_graphs_;
    std::map<std::pair<GraphId, std::size_t>, GraphId> wrappers_;
    std::unordered_map<GraphId, NodeId> wrapper_calls_;
};

/// Env key under which the sensitivity of free variable `n` travels.
inline std::int64_t env_key(NodeId n) { return static_cast<std::int64_t>(n.value); }

} // namespace gradc
