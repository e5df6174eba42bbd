#include "gradc/ir.hpp"

#include <algorithm>

#include <fmt/core.h>

namespace gradc {

namespace {
bool is_internable(const Value& v) {
    switch (v.kind()) {
        case ValueKind::Float:
        case ValueKind::Int:
        case ValueKind::Bool:
        case ValueKind::Primitive:
        case ValueKind::GraphRef: return true;
        case ValueKind::Env: return v.as_env().empty();
        default: return false;
    }
}
} // namespace

// ---------------------------------------------------------------------------
// construction

GraphId GraphStore::new_graph(std::string name) {
    GraphId id(static_cast<std::uint32_t>(graphs_.size()));
    Graph g;
    g.id = id;
    g.name = std::move(name);
    graphs_.push_back(std::move(g));
    touch();
    return id;
}

NodeId GraphStore::add_parameter(GraphId g, std::string name) {
    auto& graph = graph_mut(g);
    NodeId id(static_cast<std::uint32_t>(nodes_.size()));
    Node n;
    n.kind = NodeKind::Parameter;
    n.owner = g;
    n.position = static_cast<std::uint32_t>(graph.parameters.size());
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    users_.emplace_back();
    graph.parameters.push_back(id);
    graph.owned.push_back(id);
    touch();
    return id;
}

NodeId GraphStore::apply(GraphId g, std::vector<NodeId> inputs) {
    if (inputs.empty()) fail(Stage::Ir, "apply node needs a callee");
    graph_mut(g);
    for (auto in : inputs)
        if (!contains(in)) fail(Stage::Ir, fmt::format("unknown node id {}", in.value));
    NodeId id(static_cast<std::uint32_t>(nodes_.size()));
    Node n;
    n.kind = NodeKind::Apply;
    n.owner = g;
    n.inputs = std::move(inputs);
    nodes_.push_back(std::move(n));
    users_.emplace_back();
    const auto& stored = nodes_.back().inputs;
    for (std::uint32_t i = 0; i < stored.size(); ++i) add_use(stored[i], Use{id, i});
    graphs_[g.value].owned.push_back(id);
    touch();
    return id;
}

NodeId GraphStore::apply(GraphId g, NodeId callee, std::span<const NodeId> args) {
    std::vector<NodeId> inputs;
    inputs.reserve(args.size() + 1);
    inputs.push_back(callee);
    inputs.insert(inputs.end(), args.begin(), args.end());
    return apply(g, std::move(inputs));
}

NodeId GraphStore::constant(Value v) {
    std::size_t h = 0;
    if (is_internable(v)) {
        h = value_hash(v);
        auto it = interned_.find(h);
        if (it != interned_.end())
            for (auto id : it->second)
                if (identical(nodes_[id.value].value, v)) return id;
    }
    NodeId id(static_cast<std::uint32_t>(nodes_.size()));
    bool intern = is_internable(v);
    Node n;
    n.kind = NodeKind::Constant;
    n.value = std::move(v);
    nodes_.push_back(std::move(n));
    users_.emplace_back();
    if (intern) interned_[h].push_back(id);
    touch();
    return id;
}

void GraphStore::set_return(GraphId g, NodeId n) {
    auto& graph = graph_mut(g);
    if (!contains(n)) fail(Stage::Ir, fmt::format("unknown node id {}", n.value));
    graph.return_node = n;
    touch();
}

// ---------------------------------------------------------------------------
// editing

void GraphStore::add_use(NodeId value, Use use) { users_[value.value].push_back(use); }

void GraphStore::drop_use(NodeId value, Use use) {
    auto& list = users_[value.value];
    auto it = std::find(list.begin(), list.end(), use);
    if (it == list.end()) internal_error(Stage::Ir, "reverse-use index out of sync");
    *it = list.back();
    list.pop_back();
}

void GraphStore::set_input(NodeId n, std::size_t position, NodeId value) {
    auto& node = node_mut(n);
    if (position >= node.inputs.size()) fail(Stage::Ir, "input position out of range");
    if (!contains(value)) fail(Stage::Ir, fmt::format("unknown node id {}", value.value));
    Use use{n, static_cast<std::uint32_t>(position)};
    drop_use(node.inputs[position], use);
    node.inputs[position] = value;
    add_use(value, use);
    touch();
}

void GraphStore::replace_all_uses(NodeId old_node, NodeId replacement) {
    if (old_node == replacement) return;
    auto uses = users(old_node);
    for (auto use : uses) set_input(use.user, use.position, replacement);
    for (auto& g : graphs_)
        if (g.alive && g.return_node == old_node) g.return_node = replacement;
    touch();
}

void GraphStore::remove_nodes(std::span<const NodeId> nodes, std::span<const GraphId> graphs) {
    std::unordered_set<NodeId> doomed(nodes.begin(), nodes.end());
    std::unordered_set<GraphId> dying(graphs.begin(), graphs.end());
    for (auto n : nodes) {
        for (auto use : users(n))
            if (!doomed.contains(use.user))
                internal_error(Stage::Ir, fmt::format("removing node {} that is still used by node {} in '{}'", n.value,
                                                      use.user.value, graph(nodes_[use.user.value].owner).name));
        const auto& node = nodes_[n.value];
        if (contains(node.owner) && !dying.contains(node.owner) && graphs_[node.owner.value].return_node == n)
            internal_error(Stage::Ir, fmt::format("removing node {}, the return node of '{}'", n.value,
                                                  graph(node.owner).name));
    }
    for (auto n : nodes) {
        auto& node = node_mut(n);
        for (std::uint32_t i = 0; i < node.inputs.size(); ++i) drop_use(node.inputs[i], Use{n, i});
    }
    for (auto n : nodes) {
        auto& node = nodes_[n.value];
        if (node.is_constant() && is_internable(node.value)) {
            auto& bucket = interned_[value_hash(node.value)];
            bucket.erase(std::remove(bucket.begin(), bucket.end(), n), bucket.end());
        }
        node.alive = false;
        node.inputs.clear();
        users_[n.value].clear();
    }
    for (auto g : graphs) {
        auto& graph = graph_mut(g);
        for (auto n : graph.owned)
            if (nodes_[n.value].alive) internal_error(Stage::Ir, fmt::format("removing graph '{}' with live nodes", graph.name));
        graph.return_node = NodeId();
        graph.alive = false;
    }
    touch();
}

void GraphStore::remove_graph(GraphId g) {
    std::vector<NodeId> owned = owned_nodes(g);
    GraphId graphs[] = {g};
    remove_nodes(owned, graphs);
}

void GraphStore::set_node_name(NodeId n, std::string name) { node_mut(n).name = std::move(name); }
void GraphStore::set_node_loc(NodeId n, SourceLoc loc) { node_mut(n).loc = loc; }
void GraphStore::set_graph_name(GraphId g, std::string name) { graph_mut(g).name = std::move(name); }
void GraphStore::add_flags(GraphId g, unsigned flags) { graph_mut(g).flags |= flags; }

// ---------------------------------------------------------------------------
// access

bool GraphStore::contains(NodeId n) const { return n.valid() && n.value < nodes_.size() && nodes_[n.value].alive; }
bool GraphStore::contains(GraphId g) const { return g.valid() && g.value < graphs_.size() && graphs_[g.value].alive; }

const Node& GraphStore::node(NodeId n) const {
    if (!contains(n)) fail(Stage::Ir, fmt::format("unknown node id {}", n.value));
    return nodes_[n.value];
}

const Graph& GraphStore::graph(GraphId g) const {
    if (!contains(g)) fail(Stage::Ir, fmt::format("unknown graph id {}", g.value));
    return graphs_[g.value];
}

Node& GraphStore::node_mut(NodeId n) {
    if (!contains(n)) fail(Stage::Ir, fmt::format("unknown node id {}", n.value));
    return nodes_[n.value];
}

Graph& GraphStore::graph_mut(GraphId g) {
    if (!contains(g)) fail(Stage::Ir, fmt::format("unknown graph id {}", g.value));
    return graphs_[g.value];
}

const std::vector<Use>& GraphStore::users(NodeId n) const {
    node(n);
    return users_[n.value];
}

std::vector<GraphId> GraphStore::graphs() const {
    std::vector<GraphId> out;
    for (const auto& g : graphs_)
        if (g.alive) out.push_back(g.id);
    return out;
}

std::vector<NodeId> GraphStore::owned_nodes(GraphId g) const {
    std::vector<NodeId> out;
    for (auto n : graph(g).owned)
        if (nodes_[n.value].alive) out.push_back(n);
    return out;
}

std::size_t GraphStore::live_node_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const Node& n) { return n.alive; }));
}

std::optional<GraphId> GraphStore::graph_of_constant(NodeId n) const {
    const auto& nd = node(n);
    if (nd.is_constant() && nd.value.is(ValueKind::GraphRef)) return nd.value.as_graph_ref().graph;
    return std::nullopt;
}

std::optional<Primitive> GraphStore::primitive_of_constant(NodeId n) const {
    const auto& nd = node(n);
    if (nd.is_constant() && nd.value.is(ValueKind::Primitive)) return nd.value.as_primitive();
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// analyses

void GraphStore::refresh_analyses() const {
    if (analyses_.version == version_) return;
    analyses_.free_variables.clear();
    analyses_.parents.clear();
    compute_free_variables();
    analyses_.version = version_;
}

void GraphStore::compute_free_variables() const {
    auto& fvs = analyses_.free_variables;
    std::vector<GraphId> order;
    for (const auto& g : graphs_)
        if (g.alive && g.return_node.valid()) {
            order.push_back(g.id);
            fvs[g.id] = {};
        }

    // Iterate to a fixpoint: a graph's free variables include those of the
    // graphs it references that it does not own itself.
    bool changed = true;
    while (changed) {
        changed = false;
        for (auto gid : order) {
            std::vector<NodeId> result;
            std::unordered_set<NodeId> seen_fv;
            std::unordered_set<NodeId> visited;
            std::vector<NodeId> stack{graphs_[gid.value].return_node};
            while (!stack.empty()) {
                NodeId n = stack.back();
                stack.pop_back();
                if (!visited.insert(n).second) continue;
                const Node& nd = nodes_[n.value];
                if (nd.is_constant()) {
                    if (!nd.value.is(ValueKind::GraphRef)) continue;
                    GraphId h = nd.value.as_graph_ref().graph;
                    auto it = fvs.find(h);
                    if (h == gid || it == fvs.end()) continue;
                    const auto& inner = it->second;
                    for (auto v = inner.rbegin(); v != inner.rend(); ++v) stack.push_back(*v);
                    continue;
                }
                if (nd.owner == gid) {
                    for (auto in = nd.inputs.rbegin(); in != nd.inputs.rend(); ++in) stack.push_back(*in);
                    continue;
                }
                if (seen_fv.insert(n).second) result.push_back(n);
            }
            if (result != fvs[gid]) {
                fvs[gid] = std::move(result);
                changed = true;
            }
        }
    }
}

const std::vector<NodeId>& GraphStore::free_variables(GraphId g) const {
    std::lock_guard lock(analyses_mutex_);
    const auto& graph_rec = graph(g);
    if (!graph_rec.return_node.valid()) fail(Stage::Ir, fmt::format("graph '{}': return node unset", graph_rec.name));
    refresh_analyses();
    return analyses_.free_variables.at(g);
}

std::optional<GraphId> GraphStore::nesting_parent(GraphId g) const {
    std::lock_guard lock(analyses_mutex_);
    refresh_analyses();
    if (auto it = analyses_.parents.find(g); it != analyses_.parents.end()) return it->second;

    std::unordered_set<GraphId> in_progress;
    std::unordered_map<GraphId, int> depth_memo;

    auto compute = [&](auto& self, GraphId gid) -> std::optional<GraphId> {
        if (auto it = analyses_.parents.find(gid); it != analyses_.parents.end()) return it->second;
        if (!in_progress.insert(gid).second)
            fail(Stage::Ir, fmt::format("cycle in nesting relation at graph '{}'", graphs_[gid.value].name));
        auto depth = [&](GraphId o) {
            if (auto it = depth_memo.find(o); it != depth_memo.end()) return it->second;
            int d = 0;
            for (auto p = self(self, o); p; p = self(self, *p)) ++d;
            depth_memo[o] = d;
            return d;
        };
        std::optional<GraphId> best;
        int best_depth = -1;
        auto fv_it = analyses_.free_variables.find(gid);
        if (fv_it != analyses_.free_variables.end()) {
            for (auto v : fv_it->second) {
                GraphId owner = nodes_[v.value].owner;
                if (best && *best == owner) continue;
                int d = depth(owner);
                if (d > best_depth) {
                    best = owner;
                    best_depth = d;
                }
            }
        }
        in_progress.erase(gid);
        analyses_.parents[gid] = best;
        return best;
    };
    return compute(compute, g);
}

bool GraphStore::encloses(GraphId ancestor, GraphId g) const {
    int guard = 0;
    for (auto p = nesting_parent(g); p; p = nesting_parent(*p)) {
        if (*p == ancestor) return true;
        if (++guard > 100000) fail(Stage::Ir, "nesting chain too deep");
    }
    return false;
}

std::vector<NodeId> GraphStore::schedule(GraphId g, std::mt19937* rng) const {
    const auto& graph_rec = graph(g);
    if (!graph_rec.return_node.valid()) fail(Stage::Ir, fmt::format("graph '{}': return node unset", graph_rec.name));
    std::vector<NodeId> out;
    std::unordered_set<NodeId> visited;
    struct Item {
        NodeId node;
        bool expanded;
    };
    std::vector<Item> stack{{graph_rec.return_node, false}};
    std::vector<NodeId> children;
    while (!stack.empty()) {
        Item item = stack.back();
        stack.pop_back();
        const Node& nd = nodes_[item.node.value];
        if (item.expanded) {
            if (nd.is_apply() && nd.owner == g) out.push_back(item.node);
            continue;
        }
        if (!visited.insert(item.node).second) continue;
        stack.push_back({item.node, true});
        children.clear();
        if (nd.is_apply() && nd.owner == g) {
            children = nd.inputs;
        } else if (nd.is_constant() && nd.value.is(ValueKind::GraphRef)) {
            GraphId h = nd.value.as_graph_ref().graph;
            if (h != g && contains(h) && graphs_[h.value].return_node.valid())
                for (auto v : free_variables(h))
                    if (nodes_[v.value].owner == g) children.push_back(v);
        }
        if (rng) std::shuffle(children.begin(), children.end(), *rng);
        for (auto c = children.rbegin(); c != children.rend(); ++c)
            if (!visited.contains(*c)) stack.push_back({*c, false});
    }
    return out;
}

std::vector<GraphId> GraphStore::referenced_graphs(GraphId g) const {
    std::vector<GraphId> out;
    std::unordered_set<GraphId> seen;
    auto consider = [&](NodeId n) {
        if (auto h = graph_of_constant(n); h && contains(*h) && seen.insert(*h).second) out.push_back(*h);
    };
    for (auto n : schedule(g))
        for (auto in : nodes_[n.value].inputs) consider(in);
    consider(graph(g).return_node);
    return out;
}

std::vector<GraphId> GraphStore::reachable_graphs(std::span<const GraphId> roots) const {
    std::vector<GraphId> out;
    std::unordered_set<GraphId> seen;
    std::vector<GraphId> work(roots.rbegin(), roots.rend());
    while (!work.empty()) {
        GraphId g = work.back();
        work.pop_back();
        if (!seen.insert(g).second) continue;
        out.push_back(g);
        auto refs = referenced_graphs(g);
        for (auto it = refs.rbegin(); it != refs.rend(); ++it)
            if (!seen.contains(*it)) work.push_back(*it);
    }
    return out;
}

std::vector<GraphId> GraphStore::descendants(GraphId g) const {
    std::vector<GraphId> out;
    GraphId roots[] = {g};
    for (auto h : reachable_graphs(roots))
        if (h != g && encloses(g, h)) out.push_back(h);
    return out;
}

// ---------------------------------------------------------------------------
// audit

std::vector<std::string> GraphStore::audit() const {
    std::vector<std::string> problems;
    auto report = [&](std::string s) { problems.push_back(std::move(s)); };

    // Every use entry must match an input and appear once; then equal totals
    // mean every input is listed. The per-input scan only runs to locate a gap.
    std::size_t live_inputs = 0, matched_uses = 0;
    for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
        const Node& nd = nodes_[i];
        if (!nd.alive) continue;
        NodeId id(i);
        for (std::uint32_t p = 0; p < nd.inputs.size(); ++p) {
            NodeId in = nd.inputs[p];
            if (!contains(in))
                report(fmt::format("node {} input {} refers to dead node {}", i, p, in.value));
            else
                ++live_inputs;
        }
        std::vector<Use> uses = users_[i];
        for (auto use : uses) {
            if (!contains(use.user) || nodes_[use.user.value].inputs.size() <= use.position ||
                nodes_[use.user.value].inputs[use.position] != id)
                report(fmt::format("users of {} lists ({}, {}) without a matching input", i, use.user.value,
                                   use.position));
            else
                ++matched_uses;
        }
        std::sort(uses.begin(), uses.end(), [](Use a, Use b) {
            return std::pair(a.user.value, a.position) < std::pair(b.user.value, b.position);
        });
        if (std::adjacent_find(uses.begin(), uses.end()) != uses.end())
            report(fmt::format("users of {} lists a use twice", i));
        switch (nd.kind) {
            case NodeKind::Apply:
                if (nd.inputs.empty()) report(fmt::format("apply node {} has no callee", i));
                if (!contains(nd.owner)) report(fmt::format("apply node {} has no live owner", i));
                break;
            case NodeKind::Constant:
                if (!nd.inputs.empty()) report(fmt::format("constant {} has inputs", i));
                if (nd.owner.valid()) report(fmt::format("constant {} has an owner", i));
                break;
            case NodeKind::Parameter:
                if (!contains(nd.owner)) {
                    report(fmt::format("parameter {} has no live owner", i));
                    break;
                }
                {
                    const auto& params = graphs_[nd.owner.value].parameters;
                    if (nd.position >= params.size() || params[nd.position] != id ||
                        std::count(params.begin(), params.end(), id) != 1)
                        report(fmt::format("parameter {} not at its position in its owner", i));
                }
                break;
        }
    }
    if (live_inputs != matched_uses) {
        for (std::uint32_t i = 0; i < nodes_.size(); ++i) {
            const Node& nd = nodes_[i];
            if (!nd.alive) continue;
            for (std::uint32_t p = 0; p < nd.inputs.size(); ++p) {
                NodeId in = nd.inputs[p];
                if (!contains(in)) continue;
                const auto& u = users_[in.value];
                if (std::find(u.begin(), u.end(), Use{NodeId(i), p}) == u.end())
                    report(fmt::format("node {} input {} missing from users of {}", i, p, in.value));
            }
        }
    }
    for (const auto& g : graphs_) {
        if (!g.alive) continue;
        if (!g.return_node.valid()) {
            report(fmt::format("graph '{}' has no return node", g.name));
            continue;
        }
        if (!contains(g.return_node)) report(fmt::format("graph '{}' returns a dead node", g.name));
    }
    if (!problems.empty()) return problems;

    try {
        for (const auto& g : graphs_) {
            if (!g.alive) continue;
            nesting_parent(g.id);
            for (auto v : free_variables(g.id)) {
                GraphId owner = nodes_[v.value].owner;
                if (owner == g.id || !encloses(owner, g.id))
                    report(fmt::format("graph '{}' refers to node {} of non-enclosing graph '{}'", g.name, v.value,
                                       graphs_[owner.value].name));
            }
        }
    } catch (const Error& e) {
        report(e.message());
    }
    return problems;
}

// ---------------------------------------------------------------------------
// cloning

namespace {

NodeId clone_family(GraphStore& store, GraphId root, std::optional<GraphId> target,
                    const std::unordered_map<NodeId, NodeId>& substitutions, std::span<const NodeId> args,
                    CloneMap& map) {
    const auto family_tail = store.descendants(root);
    std::vector<GraphId> family{root};
    family.insert(family.end(), family_tail.begin(), family_tail.end());

    map.nodes.insert(substitutions.begin(), substitutions.end());
    for (const auto& [from, to] : substitutions)
        if (!store.contains(to)) fail(Stage::Ir, fmt::format("substitution target {} missing from store", to.value));

    // graph shells and parameters
    for (auto g : family) {
        if (g == root && target) {
            const auto& params = store.graph(root).parameters;
            if (params.size() != args.size()) fail(Stage::Ir, "inline arity mismatch");
            for (std::size_t i = 0; i < params.size(); ++i) map.nodes[params[i]] = args[i];
            continue;
        }
        // new_graph may reallocate the graph table, so copy what we need first.
        std::string name = store.graph(g).name;
        unsigned flags = store.graph(g).flags;
        std::vector<NodeId> params = store.graph(g).parameters;
        GraphId copy = store.new_graph(std::move(name));
        store.add_flags(copy, flags);
        map.graphs[g] = copy;
        for (auto p : params) {
            NodeId np = store.add_parameter(copy, store.node(p).name);
            map.nodes.try_emplace(p, np);
        }
    }

    // apply nodes with their original inputs, then remap
    std::vector<NodeId> created;
    for (auto g : family) {
        GraphId owner = (g == root && target) ? *target : map.graphs.at(g);
        for (auto n : store.owned_nodes(g)) {
            const Node& src = store.node(n);
            if (!src.is_apply() || map.nodes.contains(n)) continue;
            std::vector<NodeId> inputs = src.inputs;
            std::string name = src.name;
            SourceLoc loc = src.loc;
            NodeId copy = store.apply(owner, std::move(inputs));
            store.set_node_name(copy, std::move(name));
            store.set_node_loc(copy, loc);
            map.nodes[n] = copy;
            created.push_back(copy);
        }
    }
    auto remap = [&](NodeId in) -> NodeId {
        if (auto it = map.nodes.find(in); it != map.nodes.end()) return it->second;
        if (auto h = store.graph_of_constant(in)) {
            if (auto it = map.graphs.find(*h); it != map.graphs.end()) return store.constant_graph(it->second);
        }
        return in;
    };
    for (auto copy : created) {
        std::size_t count = store.node(copy).inputs.size();
        for (std::size_t i = 0; i < count; ++i) {
            NodeId in = store.node(copy).inputs[i];
            NodeId mapped = remap(in);
            if (mapped != in) store.set_input(copy, i, mapped);
        }
    }
    NodeId inlined;
    for (auto g : family) {
        NodeId ret = remap(store.graph(g).return_node);
        if (g == root && target)
            inlined = ret;
        else
            store.set_return(map.graphs.at(g), ret);
    }
    return inlined;
}

} // namespace

GraphId clone_graph(GraphStore& store, GraphId g, const std::unordered_map<NodeId, NodeId>& substitutions,
                    CloneMap* out) {
    CloneMap local;
    CloneMap& map = out ? *out : local;
    clone_family(store, g, std::nullopt, substitutions, {}, map);
    return map.graphs.at(g);
}

NodeId clone_body_into(GraphStore& store, GraphId callee, GraphId target, std::span<const NodeId> args,
                       CloneMap* out) {
    CloneMap local;
    CloneMap& map = out ? *out : local;
    return clone_family(store, callee, target, {}, args, map);
}

} // namespace gradc
