#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/ir.hpp"

namespace gradc {

enum class DumpStyle {
    /// One statement per line, graphs separated by blank lines.
    Multiline,
    /// `graph f(%x) { %a = pow(%x, 3.0); return %a }`, one graph per line.
    Compact,
};

/// Deterministic ANF listing of `roots` and every graph reachable from them.
std::string dump_text(const GraphStore& store, std::span<const GraphId> roots,
                      DumpStyle style = DumpStyle::Multiline);

struct ParsedModule {
    std::vector<GraphId> graphs; // in textual order
    std::map<std::string, GraphId> by_name;
};

/// Reads the format produced by dump_text back into `store`.
ParsedModule parse_text(GraphStore& store, std::string_view text);

} // namespace gradc
