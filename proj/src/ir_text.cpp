#include "gradc/ir_text.hpp"

#include <cctype>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>

namespace gradc {

namespace {

bool is_name_char(char c) {
    auto u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '_' || c == '.' || u >= 0x80;
}

std::string sanitize(std::string_view raw, std::string_view fallback) {
    std::string out;
    for (char c : raw) out += is_name_char(c) ? c : '_';
    if (out.empty()) out = fallback;
    if (std::isdigit(static_cast<unsigned char>(out[0]))) out = "_" + out;
    return out;
}

class Namer {
public:
    std::string unique(const std::string& base) {
        if (used_.insert(base).second) return base;
        for (int i = 1;; ++i) {
            auto candidate = fmt::format("{}.{}", base, i);
            if (used_.insert(candidate).second) return candidate;
        }
    }
    std::string fresh_temp() {
        while (true) {
            auto candidate = fmt::format("t{}", counter_++);
            if (used_.insert(candidate).second) return candidate;
        }
    }

private:
    std::unordered_set<std::string> used_;
    int counter_ = 0;
};

} // namespace

std::string dump_text(const GraphStore& store, std::span<const GraphId> roots, DumpStyle style) {
    for (auto g : roots)
        if (!store.graph(g).return_node.valid())
            fail(Stage::Ir, fmt::format("cannot dump graph '{}': return node unset", store.graph(g).name));

    auto graphs = store.reachable_graphs(roots);
    Namer graph_namer;
    std::unordered_map<GraphId, std::string> graph_names;
    for (auto g : graphs) graph_names[g] = graph_namer.unique(sanitize(store.graph(g).name, "g"));

    // Node names are unique across the whole dump so free-variable
    // references resolve unambiguously when parsed back.
    Namer node_namer;
    std::unordered_map<NodeId, std::string> node_names;
    std::unordered_map<GraphId, std::vector<NodeId>> schedules;
    for (auto g : graphs) {
        const auto& graph = store.graph(g);
        for (std::size_t i = 0; i < graph.parameters.size(); ++i) {
            auto p = graph.parameters[i];
            node_names[p] = node_namer.unique(sanitize(store.node(p).name, fmt::format("p{}", i)));
        }
    }
    for (auto g : graphs) {
        schedules[g] = store.schedule(g);
        for (auto n : schedules[g]) {
            const auto& name = store.node(n).name;
            node_names[n] = name.empty() ? node_namer.fresh_temp() : node_namer.unique(sanitize(name, "t"));
        }
    }

    auto atom = [&](NodeId n) -> std::string {
        const Node& nd = store.node(n);
        if (!nd.is_constant()) {
            auto it = node_names.find(n);
            if (it == node_names.end()) fail(Stage::Ir, fmt::format("node {} is not scheduled in any dumped graph", n.value));
            return "%" + it->second;
        }
        if (nd.value.is(ValueKind::GraphRef)) return "@" + graph_names.at(nd.value.as_graph_ref().graph);
        if (nd.value.is(ValueKind::Closure)) fail(Stage::Ir, "closure constants cannot be dumped");
        return to_string(nd.value);
    };

    std::string out;
    for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
        GraphId g = graphs[gi];
        const auto& graph = store.graph(g);
        std::string header = "graph " + graph_names[g] + "(";
        for (std::size_t i = 0; i < graph.parameters.size(); ++i)
            header += (i ? ", " : "") + atom(graph.parameters[i]);
        header += ") {";

        std::vector<std::string> stmts;
        for (auto n : schedules[g]) {
            const Node& nd = store.node(n);
            std::string s = atom(n) + " = " + atom(nd.inputs[0]) + "(";
            for (std::size_t i = 1; i < nd.inputs.size(); ++i) s += (i > 1 ? ", " : "") + atom(nd.inputs[i]);
            stmts.push_back(s + ")");
        }
        stmts.push_back("return " + atom(graph.return_node));

        if (style == DumpStyle::Compact) {
            out += header + " ";
            for (std::size_t i = 0; i < stmts.size(); ++i) out += (i ? "; " : "") + stmts[i];
            out += " }\n";
        } else {
            if (gi) out += "\n";
            out += header + "\n";
            for (const auto& s : stmts) out += "  " + s + "\n";
            out += "}\n";
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// parsing

namespace {

struct Atom {
    enum Kind { NodeRef, GraphRef, Prim, Literal } kind;
    std::string name;
    Value literal;
};

struct ParsedStmt {
    std::string lhs;
    std::vector<Atom> call; // callee followed by arguments
};

struct ParsedGraph {
    std::string name;
    std::vector<std::string> params;
    std::vector<ParsedStmt> body;
    Atom ret;
};

class TextParser {
public:
    explicit TextParser(std::string_view text) : text_(text) {}

    std::vector<ParsedGraph> parse_all() {
        std::vector<ParsedGraph> out;
        skip();
        while (pos_ < text_.size()) {
            out.push_back(parse_graph());
            skip();
        }
        return out;
    }

private:
    [[noreturn]] void error(const std::string& what) const {
        int line = 1, col = 1;
        for (std::size_t i = 0; i < pos_ && i < text_.size(); ++i) {
            if (text_[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        fail(Stage::Ir, "IR text: " + what, SourceLoc{line, col});
    }

    void skip() {
        while (pos_ < text_.size()) {
            char c = text_[pos_];
            if (std::isspace(static_cast<unsigned char>(c)) || c == ';') {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

    bool accept(char c) {
        skip();
        if (peek() != c) return false;
        ++pos_;
        return true;
    }

    void expect(char c) {
        if (!accept(c)) error(fmt::format("expected '{}'", c));
    }

    std::string name() {
        std::size_t start = pos_;
        while (pos_ < text_.size() && is_name_char(text_[pos_])) ++pos_;
        if (start == pos_) error("expected a name");
        return std::string(text_.substr(start, pos_ - start));
    }

    bool keyword(std::string_view kw) {
        skip();
        if (!text_.substr(pos_).starts_with(kw)) return false;
        std::size_t end = pos_ + kw.size();
        if (end < text_.size() && is_name_char(text_[end])) return false;
        pos_ = end;
        return true;
    }

    ParsedGraph parse_graph() {
        if (!keyword("graph")) error("expected 'graph'");
        ParsedGraph g;
        skip();
        g.name = name();
        expect('(');
        if (!accept(')')) {
            do {
                expect('%');
                g.params.push_back(name());
            } while (accept(','));
            expect(')');
        }
        expect('{');
        while (true) {
            if (keyword("return")) {
                g.ret = atom();
                expect('}');
                return g;
            }
            skip();
            ParsedStmt s;
            expect('%');
            s.lhs = name();
            expect('=');
            s.call.push_back(atom());
            expect('(');
            if (!accept(')')) {
                do {
                    s.call.push_back(atom());
                } while (accept(','));
                expect(')');
            }
            g.body.push_back(std::move(s));
        }
    }

    Atom atom() {
        skip();
        char c = peek();
        if (c == '%') {
            ++pos_;
            return Atom{Atom::NodeRef, name(), {}};
        }
        if (c == '@') {
            ++pos_;
            return Atom{Atom::GraphRef, name(), {}};
        }
        auto rest = text_.substr(pos_);
        bool literal = c == '(' || c == '-' || c == '+' || std::isdigit(static_cast<unsigned char>(c)) ||
                       rest.starts_with("t[") || rest.starts_with("env{") || rest.starts_with("nan") ||
                       rest.starts_with("inf");
        if (!literal) {
            std::size_t save = pos_;
            auto word = name();
            if (word == "true" || word == "false") {
                pos_ = save;
                literal = true;
            } else {
                if (!primitive_by_name(word)) error(fmt::format("unknown primitive '{}'", word));
                return Atom{Atom::Prim, word, {}};
            }
        }
        try {
            Value v = parse_value_prefix(text_, pos_);
            return Atom{Atom::Literal, {}, std::move(v)};
        } catch (const Error& e) {
            error(e.message());
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};

} // namespace

ParsedModule parse_text(GraphStore& store, std::string_view text) {
    auto parsed = TextParser(text).parse_all();

    ParsedModule module;
    std::unordered_map<std::string, NodeId> nodes;
    for (const auto& pg : parsed) {
        if (module.by_name.contains(pg.name)) fail(Stage::Ir, fmt::format("IR text: duplicate graph '{}'", pg.name));
        GraphId g = store.new_graph(pg.name);
        module.graphs.push_back(g);
        module.by_name[pg.name] = g;
        for (const auto& p : pg.params) {
            if (nodes.contains(p)) fail(Stage::Ir, fmt::format("IR text: duplicate node '%{}'", p));
            nodes[p] = store.add_parameter(g, p);
        }
    }

    NodeId placeholder = store.constant(Value(0.0));
    std::vector<std::pair<NodeId, const ParsedStmt*>> pending;
    for (std::size_t gi = 0; gi < parsed.size(); ++gi) {
        for (const auto& s : parsed[gi].body) {
            if (nodes.contains(s.lhs)) fail(Stage::Ir, fmt::format("IR text: duplicate node '%{}'", s.lhs));
            NodeId n = store.apply(module.graphs[gi], std::vector<NodeId>(s.call.size(), placeholder));
            store.set_node_name(n, s.lhs);
            nodes[s.lhs] = n;
            pending.emplace_back(n, &s);
        }
    }

    auto resolve = [&](const Atom& a) -> NodeId {
        switch (a.kind) {
            case Atom::NodeRef: {
                auto it = nodes.find(a.name);
                if (it == nodes.end()) fail(Stage::Ir, fmt::format("IR text: unknown node '%{}'", a.name));
                return it->second;
            }
            case Atom::GraphRef: {
                auto it = module.by_name.find(a.name);
                if (it == module.by_name.end()) fail(Stage::Ir, fmt::format("IR text: unknown graph '@{}'", a.name));
                return store.constant_graph(it->second);
            }
            case Atom::Prim: return store.constant_prim(*primitive_by_name(a.name));
            case Atom::Literal: return store.constant(a.literal);
        }
        return placeholder;
    };

    for (const auto& [n, s] : pending)
        for (std::size_t i = 0; i < s->call.size(); ++i) store.set_input(n, i, resolve(s->call[i]));
    for (std::size_t gi = 0; gi < parsed.size(); ++gi) store.set_return(module.graphs[gi], resolve(parsed[gi].ret));
    return module;
}

} // namespace gradc
