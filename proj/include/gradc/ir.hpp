#pragma once

#include <cstdint>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "gradc/error.hpp"
#include "gradc/ids.hpp"
#include "gradc/value.hpp"

namespace gradc {

enum class NodeKind { Apply, Constant, Parameter };

/// One node of the graph IR. Apply nodes list the callee at input 0,
/// constants have no inputs and no owner.
struct Node {
    NodeKind kind = NodeKind::Apply;
    std::vector<NodeId> inputs;
    Value value;
    GraphId owner;
    std::uint32_t position = 0;
    std::string name;
    SourceLoc loc;
    bool alive = true;

    bool is_apply() const { return kind == NodeKind::Apply; }
    bool is_constant() const { return kind == NodeKind::Constant; }
    bool is_parameter() const { return kind == NodeKind::Parameter; }
};

struct Use {
    NodeId user;
    std::uint32_t position;

    friend bool operator==(Use, Use) = default;
};

enum GraphFlag : unsigned {
    kAdGenerated = 1u << 0,
    kSpecialized = 1u << 1,
    kGradWrapper = 1u << 2,
    kBackpropagator = 1u << 3,
};

struct Graph {
    GraphId id;
    std::string name;
    std::vector<NodeId> parameters;
    NodeId return_node;
    unsigned flags = 0;
    bool alive = true;
    // Every node ever created with this owner; filtered by Node::alive.
    std::vector<NodeId> owned;

    bool has(GraphFlag f) const { return (flags & f) != 0; }
};

/// Owns every graph and node of a program unit and keeps the reverse-use
/// index in sync with the input lists. All mutation goes through the
/// member functions below, each of which leaves the bidirectional index
/// consistent.
class GraphStore {
public:
    GraphStore() = default;
    GraphStore(const GraphStore&) = delete;
    GraphStore& operator=(const GraphStore&) = delete;

    // construction
    GraphId new_graph(std::string name);
    NodeId add_parameter(GraphId g, std::string name);
    NodeId apply(GraphId g, std::vector<NodeId> inputs);
    NodeId apply(GraphId g, NodeId callee, std::span<const NodeId> args);
    NodeId constant(Value v);
    NodeId constant_graph(GraphId g) { return constant(Value(GraphRef{g})); }
    NodeId constant_prim(Primitive p) { return constant(Value(p)); }
    void set_return(GraphId g, NodeId n);

    // editing
    void set_input(NodeId n, std::size_t position, NodeId value);
    void replace_all_uses(NodeId old_node, NodeId replacement);
    /// Removes nodes; any remaining user of a removed node must itself be
    /// in the removed set. Return nodes may only go together with their
    /// graph, listed in `graphs`, whose nodes must all be in the set.
    void remove_nodes(std::span<const NodeId> nodes, std::span<const GraphId> graphs = {});
    void remove_graph(GraphId g);
    void set_node_name(NodeId n, std::string name);
    void set_node_loc(NodeId n, SourceLoc loc);
    void set_graph_name(GraphId g, std::string name);
    void add_flags(GraphId g, unsigned flags);

    // access
    const Node& node(NodeId n) const;
    const Graph& graph(GraphId g) const;
    bool contains(NodeId n) const;
    bool contains(GraphId g) const;
    const std::vector<Use>& users(NodeId n) const;
    std::vector<GraphId> graphs() const;
    std::vector<NodeId> owned_nodes(GraphId g) const;
    std::size_t live_node_count() const;
    std::uint64_t version() const { return version_; }

    /// Graph referenced by a constant node, if any.
    std::optional<GraphId> graph_of_constant(NodeId n) const;
    std::optional<Primitive> primitive_of_constant(NodeId n) const;

    // analyses (cached until the next mutation)
    const std::vector<NodeId>& free_variables(GraphId g) const;
    std::optional<GraphId> nesting_parent(GraphId g) const;
    /// True when `ancestor` strictly encloses `g` in the nesting forest.
    bool encloses(GraphId ancestor, GraphId g) const;
    /// Graphs referenced by constants inside `g`'s own nodes, in first-use order.
    std::vector<GraphId> referenced_graphs(GraphId g) const;
    /// Every graph transitively reachable from `roots` through graph constants.
    std::vector<GraphId> reachable_graphs(std::span<const GraphId> roots) const;
    /// Graphs nested (transitively) inside `g`, reachable from it.
    std::vector<GraphId> descendants(GraphId g) const;
    /// Apply nodes owned by `g` in depth-first ANF order. Nodes owned by `g`
    /// that are only captured by nested closures are included before the
    /// closure's first use. An rng randomizes the visiting order of inputs
    /// and still yields a valid topological schedule.
    std::vector<NodeId> schedule(GraphId g, std::mt19937* rng = nullptr) const;

    /// Full-store invariant audit; returns one line per violation.
    std::vector<std::string> audit() const;

private:
    Node& node_mut(NodeId n);
    Graph& graph_mut(GraphId g);
    void touch() { ++version_; }
    void add_use(NodeId value, Use use);
    void drop_use(NodeId value, Use use);
    void refresh_analyses() const;
    void compute_free_variables() const;

    std::vector<Node> nodes_;
    std::vector<Graph> graphs_;
    std::vector<std::vector<Use>> users_;
    std::unordered_map<std::size_t, std::vector<NodeId>> interned_;
    std::uint64_t version_ = 0;

    struct Analyses {
        std::uint64_t version = ~std::uint64_t{0};
        std::unordered_map<GraphId, std::vector<NodeId>> free_variables;
        std::unordered_map<GraphId, std::optional<GraphId>> parents;
    };
    mutable Analyses analyses_;
    mutable std::recursive_mutex analyses_mutex_;
};

struct CloneMap {
    std::unordered_map<NodeId, NodeId> nodes;
    std::unordered_map<GraphId, GraphId> graphs;

    NodeId map(NodeId n) const {
        auto it = nodes.find(n);
        return it == nodes.end() ? n : it->second;
    }
};

/// Deep-copies `g` and every graph nested within it. Nodes in
/// `substitutions` are replaced by their images; free variables outside
/// the copied family keep pointing at the original nodes.
GraphId clone_graph(GraphStore& store, GraphId g, const std::unordered_map<NodeId, NodeId>& substitutions,
                    CloneMap* out = nullptr);

/// Copies the body of `callee` into `target` with the callee's parameters
/// replaced by `args`; nested graphs are deep-copied. Returns the image of
/// the callee's return node.
NodeId clone_body_into(GraphStore& store, GraphId callee, GraphId target, std::span<const NodeId> args,
                       CloneMap* out = nullptr);

} // namespace gradc
