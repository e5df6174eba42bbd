#include <algorithm>
#include <deque>
#include <optional>

#include <fmt/core.h>

#include "gradc/frontend.hpp"

namespace gradc {

const std::map<std::string, Primitive, std::less<>>& builtins() {
    static const std::map<std::string, Primitive, std::less<>> table = {
        {"matmul", Primitive::Matmul},     {"transpose", Primitive::Transpose},
        {"reduce_sum", Primitive::ReduceSum}, {"distribute", Primitive::Distribute},
        {"shape", Primitive::Shape},       {"exp", Primitive::Exp},
        {"log", Primitive::Log},           {"grad", Primitive::Grad},
    };
    return table;
}

GraphId LoweredModule::entry(const std::string& name) const {
    auto it = functions.find(name);
    if (it == functions.end()) fail(Stage::Lower, fmt::format("unknown function '{}'", name));
    return it->second;
}

namespace {

struct Scope {
    GraphId graph;
    Scope* parent = nullptr;
    std::string function; // enclosing surface function, for helper graph names
    // Branch bodies continue the enclosing block, so rebinding a name of
    // the enclosing scope there is a reassignment rather than shadowing.
    bool continues_parent = false;
    std::map<std::string, NodeId> names;
};

class Lowerer {
public:
    explicit Lowerer(GraphStore& store) : store_(store) {}

    LoweredModule run(const Module& module) {
        LoweredModule out;
        Scope global;
        std::vector<Scope> scopes;
        for (const auto& def : module.functions) {
            if (out.functions.contains(def->name))
                fail(Stage::Lower, fmt::format("function '{}' is defined twice", def->name), def->loc);
            GraphId g = store_.new_graph(def->name);
            out.functions[def->name] = g;
            out.order.push_back(def->name);
            global.names[def->name] = store_.constant_graph(g);
            // Parameters come first so calls to later functions see their arity.
            scopes.push_back(parameters(*def, g, &global));
        }
        for (std::size_t i = 0; i < module.functions.size(); ++i) function_body(*module.functions[i], scopes[i]);
        return out;
    }

private:
    Scope parameters(const FunctionDef& def, GraphId g, Scope* parent) {
        Scope scope{g, parent, def.name};
        for (const auto& p : def.params) scope.names[p] = store_.add_parameter(g, p);
        return scope;
    }

    void function_body(const FunctionDef& def, GraphId g, Scope* parent) {
        Scope scope = parameters(def, g, parent);
        function_body(def, scope);
    }

    void function_body(const FunctionDef& def, Scope& scope) {
        GraphId g = scope.graph;
        NodeId ret = block(def.body, 0, scope);
        if (!ret.valid()) fail(Stage::Lower, fmt::format("function '{}' can end without a return", def.name), def.loc);
        store_.set_return(g, ret);
    }

    std::optional<NodeId> find(const std::string& name, const Scope& scope) const {
        for (const Scope* s = &scope; s; s = s->parent) {
            auto it = s->names.find(name);
            if (it != s->names.end()) return it->second;
        }
        return std::nullopt;
    }

    NodeId lookup(const std::string& name, const Scope& scope, SourceLoc loc) {
        if (auto n = find(name, scope)) return *n;
        auto b = builtins().find(name);
        if (b != builtins().end()) return store_.constant_prim(b->second);
        fail(Stage::Lower, fmt::format("unbound name '{}'", name), loc);
    }

    void bind(Scope& scope, const std::string& name, NodeId n, SourceLoc loc) {
        for (Scope* s = &scope; s; s = s->parent) {
            if (s->names.contains(name))
                fail(Stage::Lower, fmt::format("name '{}' is already bound; reassignment is not allowed", name), loc);
            if (!s->continues_parent) break;
        }
        scope.names[name] = n;
        label(n, scope, name);
    }

    void label(NodeId n, const Scope& scope, const std::string& name) {
        const Node& node = store_.node(n);
        if (node.is_apply() && node.owner == scope.graph && node.name.empty()) store_.set_node_name(n, name);
    }

    NodeId call(Scope& scope, NodeId callee, std::vector<NodeId> args, SourceLoc loc) {
        NodeId n = store_.apply(scope.graph, callee, args);
        store_.set_node_loc(n, loc);
        return n;
    }

    NodeId prim(Scope& scope, Primitive p, std::vector<NodeId> args, SourceLoc loc) {
        return call(scope, store_.constant_prim(p), std::move(args), loc);
    }

    Scope& child(Scope& parent, std::deque<Scope>& arena, GraphId g, bool continues) {
        arena.push_back(Scope{g, &parent, parent.function, continues});
        return arena.back();
    }

    // Lowers statements from `from` onwards. Returns the returned node, or
    // an invalid id when control falls off the end.
    NodeId block(const std::vector<Stmt>& stmts, std::size_t from, Scope& scope) {
        for (std::size_t i = from; i < stmts.size(); ++i) {
            const Stmt& s = stmts[i];
            switch (s.kind) {
                case Stmt::Assign: bind(scope, s.name, expr(*s.expr, scope), s.loc); break;
                case Stmt::Def: {
                    GraphId g = store_.new_graph(s.def->name);
                    bind(scope, s.def->name, store_.constant_graph(g), s.loc);
                    function_body(*s.def, g, &scope);
                    break;
                }
                case Stmt::Return:
                    if (i + 1 < stmts.size()) fail(Stage::Lower, "unreachable statement after return", stmts[i + 1].loc);
                    return expr(*s.expr, scope);
                case Stmt::If: return if_stmt(stmts, i, scope);
                case Stmt::While: while_stmt(s, scope); break;
            }
        }
        return NodeId{};
    }

    NodeId if_stmt(const std::vector<Stmt>& stmts, std::size_t i, Scope& scope) {
        const Stmt& s = stmts[i];
        NodeId cond = expr(*s.expr, scope);
        std::deque<Scope> arena;

        GraphId gt = store_.new_graph(scope.function + "_then");
        Scope& then_scope = child(scope, arena, gt, true);
        NodeId rt = block(s.body, 0, then_scope);
        if (!rt.valid()) fail(Stage::Lower, "the true branch of this if falls off without a return", s.loc);
        store_.set_return(gt, rt);

        GraphId gf = store_.new_graph(scope.function + "_else");
        Scope& else_scope = child(scope, arena, gf, true);
        NodeId rf;
        if (s.has_else) {
            if (i + 1 < stmts.size())
                fail(Stage::Lower, "unreachable statement after an if whose branches both return", stmts[i + 1].loc);
            rf = block(s.orelse, 0, else_scope);
            if (!rf.valid()) fail(Stage::Lower, "the false branch of this if falls off without a return", s.loc);
        } else {
            // Without an else the rest of the block is the false branch.
            rf = block(stmts, i + 1, else_scope);
            if (!rf.valid()) fail(Stage::Lower, "code after this if falls off without a return", s.loc);
        }
        store_.set_return(gf, rf);

        NodeId selected =
            prim(scope, Primitive::Switch, {cond, store_.constant_graph(gt), store_.constant_graph(gf)}, s.loc);
        return call(scope, selected, {}, s.loc);
    }

    void check_loop_body(const std::vector<Stmt>& body) {
        for (const auto& s : body) {
            if (s.kind == Stmt::Return) fail(Stage::Lower, "return inside a while loop is not supported", s.loc);
            if (s.kind == Stmt::If) fail(Stage::Lower, "if inside a while loop is not supported", s.loc);
        }
    }

    void while_stmt(const Stmt& s, Scope& scope) {
        check_loop_body(s.body);
        // Loop variables: names the body assigns that are already bound.
        std::vector<std::string> vars;
        for (const auto& st : s.body)
            if (st.kind == Stmt::Assign && find(st.name, scope) &&
                std::find(vars.begin(), vars.end(), st.name) == vars.end())
                vars.push_back(st.name);

        std::deque<Scope> arena;
        GraphId loop = store_.new_graph(scope.function + "_loop");
        Scope& loop_scope = child(scope, arena, loop, false);
        for (const auto& v : vars) loop_scope.names[v] = store_.add_parameter(loop, v);
        NodeId loop_ref = store_.constant_graph(loop);

        GraphId body = store_.new_graph(scope.function + "_body");
        Scope& body_scope = child(loop_scope, arena, body, false);
        block(s.body, 0, body_scope);
        std::vector<NodeId> next;
        for (const auto& v : vars) next.push_back(lookup(v, body_scope, s.loc));
        store_.set_return(body, call(body_scope, loop_ref, next, s.loc));

        GraphId exit = store_.new_graph(scope.function + "_exit");
        Scope& exit_scope = child(loop_scope, arena, exit, false);
        std::vector<NodeId> finals;
        for (const auto& v : vars) finals.push_back(lookup(v, exit_scope, s.loc));
        NodeId result = finals.size() == 1 ? finals[0] : prim(exit_scope, Primitive::MakeTuple, finals, s.loc);
        store_.set_return(exit, result);

        NodeId cond = expr(*s.expr, loop_scope);
        NodeId selected = prim(loop_scope, Primitive::Switch,
                               {cond, store_.constant_graph(body), store_.constant_graph(exit)}, s.loc);
        store_.set_return(loop, call(loop_scope, selected, {}, s.loc));

        std::vector<NodeId> initial;
        for (const auto& v : vars) initial.push_back(lookup(v, scope, s.loc));
        NodeId out = call(scope, loop_ref, initial, s.loc);
        // The loop header rebinds its variables in the enclosing scope.
        if (vars.size() == 1) {
            scope.names[vars[0]] = out;
            label(out, scope, vars[0]);
        } else {
            for (std::size_t k = 0; k < vars.size(); ++k) {
                NodeId item = prim(scope, Primitive::TupleGetItem,
                                   {out, store_.constant(Value(static_cast<std::int64_t>(k)))}, s.loc);
                scope.names[vars[k]] = item;
                label(item, scope, vars[k]);
            }
        }
    }

    void check_arity(NodeId callee, std::size_t nargs, SourceLoc loc) {
        if (auto g = store_.graph_of_constant(callee)) {
            const Graph& graph = store_.graph(*g);
            if (graph.parameters.size() != nargs)
                fail(Stage::Lower,
                     fmt::format("'{}' takes {} argument(s) but is called with {}", graph.name, graph.parameters.size(),
                                 nargs),
                     loc);
        } else if (auto p = store_.primitive_of_constant(callee)) {
            const auto& info = primitive_info(*p);
            if (info.arity >= 0 && static_cast<std::size_t>(info.arity) != nargs)
                fail(Stage::Lower,
                     fmt::format("'{}' takes {} argument(s) but is called with {}", info.name, info.arity, nargs), loc);
        }
    }

    static Primitive binop_primitive(BinOp op) {
        switch (op) {
            case BinOp::Add: return Primitive::Add;
            case BinOp::Sub: return Primitive::Sub;
            case BinOp::Mul: return Primitive::Mul;
            case BinOp::Div: return Primitive::Div;
            case BinOp::Pow: return Primitive::Pow;
            case BinOp::Lt: return Primitive::Lt;
            case BinOp::Gt: return Primitive::Gt;
            case BinOp::Le: return Primitive::Le;
            case BinOp::Ge: return Primitive::Ge;
            case BinOp::Eq: return Primitive::Eq;
            case BinOp::Ne: return Primitive::Ne;
        }
        return Primitive::Add;
    }

    NodeId expr(const Expr& e, Scope& scope) {
        switch (e.kind) {
            case Expr::Float: return store_.constant(Value(e.float_value));
            case Expr::Int: return store_.constant(Value(e.int_value));
            case Expr::Bool: return store_.constant(Value(e.bool_value));
            case Expr::Name: return lookup(e.name, scope, e.loc);
            case Expr::Binary: {
                NodeId lhs = expr(*e.items[0], scope);
                const Expr& rhs_expr = *e.items[1];
                NodeId rhs;
                // Integer exponents become float constants so pow stays float-only.
                if (e.op == BinOp::Pow && rhs_expr.kind == Expr::Int)
                    rhs = store_.constant(Value(static_cast<double>(rhs_expr.int_value)));
                else
                    rhs = expr(rhs_expr, scope);
                return prim(scope, binop_primitive(e.op), {lhs, rhs}, e.loc);
            }
            case Expr::Neg: return prim(scope, Primitive::Neg, {expr(*e.items[0], scope)}, e.loc);
            case Expr::Call: {
                NodeId callee = expr(*e.items[0], scope);
                std::vector<NodeId> args;
                for (std::size_t i = 1; i < e.items.size(); ++i) args.push_back(expr(*e.items[i], scope));
                check_arity(callee, args.size(), e.loc);
                return call(scope, callee, std::move(args), e.loc);
            }
            case Expr::Tuple: {
                std::vector<NodeId> items;
                for (const auto& item : e.items) items.push_back(expr(*item, scope));
                return prim(scope, Primitive::MakeTuple, std::move(items), e.loc);
            }
            case Expr::Index:
                return prim(scope, Primitive::TupleGetItem,
                            {expr(*e.items[0], scope), store_.constant(Value(e.int_value))}, e.loc);
            case Expr::Lambda: {
                GraphId g = store_.new_graph(scope.function + "_lambda");
                std::deque<Scope> arena;
                Scope& inner = child(scope, arena, g, false);
                for (const auto& p : e.params) {
                    if (inner.names.contains(p)) fail(Stage::Lower, fmt::format("duplicate parameter '{}'", p), e.loc);
                    inner.names[p] = store_.add_parameter(g, p);
                }
                store_.set_return(g, expr(*e.items[0], inner));
                return store_.constant_graph(g);
            }
        }
        internal_error(Stage::Lower, "unknown expression kind");
    }

    GraphStore& store_;
};

} // namespace

LoweredModule lower(GraphStore& store, const Module& module) { return Lowerer(store).run(module); }

} // namespace gradc
