#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "gradc/value.hpp"

namespace gradc {

enum class FuzzCategory { Arithmetic, Tuples, Closures, Conditionals, Loops, Recursion, HigherOrder, Tensors };

inline constexpr std::array kFuzzCategories = {
    FuzzCategory::Arithmetic, FuzzCategory::Tuples,    FuzzCategory::Closures,    FuzzCategory::Conditionals,
    FuzzCategory::Loops,      FuzzCategory::Recursion, FuzzCategory::HigherOrder, FuzzCategory::Tensors,
};

std::string_view category_name(FuzzCategory c);

/// A generated source program with an entry point `f` and arguments at
/// which it is smooth: branch conditions only test parameters, and the
/// arguments keep a margin from every threshold.
struct FuzzProgram {
    std::uint64_t seed = 0;
    FuzzCategory category = FuzzCategory::Arithmetic;
    std::string source;
    std::string entry = "f";
    std::vector<Value> args;
};

/// Category chosen round-robin from the seed.
FuzzProgram generate_program(std::uint64_t seed);
FuzzProgram generate_program(std::uint64_t seed, FuzzCategory category);

} // namespace gradc
