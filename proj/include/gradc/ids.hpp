#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <limits>

namespace gradc {

namespace detail {
template <typename Tag>
struct StrongId {
    static constexpr std::uint32_t invalid_value = std::numeric_limits<std::uint32_t>::max();

    std::uint32_t value = invalid_value;

    constexpr StrongId() = default;
    constexpr explicit StrongId(std::uint32_t v) : value(v) {}

    constexpr bool valid() const { return value != invalid_value; }
    constexpr explicit operator bool() const { return valid(); }

    friend constexpr auto operator<=>(StrongId, StrongId) = default;
};
} // namespace detail

struct NodeTag;
struct GraphTag;

using NodeId = detail::StrongId<NodeTag>;
using GraphId = detail::StrongId<GraphTag>;

} // namespace gradc

template <typename Tag>
struct std::hash<gradc::detail::StrongId<Tag>> {
    std::size_t operator()(gradc::detail::StrongId<Tag> id) const noexcept {
        return std::hash<std::uint32_t>{}(id.value);
    }
};
