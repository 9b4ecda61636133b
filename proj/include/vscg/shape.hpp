#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>

#include "vscg/error.hpp"

namespace vscg {

/// Dense row-major tensor extents, rank 1..4, every extent >= 1.
class Shape {
public:
    static constexpr std::size_t kMaxRank = 4;

    Shape() = default;

    Shape(std::initializer_list<std::size_t> extents) {
        assign(std::span<const std::size_t>(extents.begin(), extents.size()));
    }

    explicit Shape(std::span<const std::size_t> extents) { assign(extents); }

    std::size_t rank() const { return rank_; }

    std::size_t operator[](std::size_t axis) const {
        if (axis >= rank_) throw ShapeError("shape axis " + std::to_string(axis) + " out of range for " + str());
        return dims_[axis];
    }

    std::size_t numel() const {
        std::size_t n = 1;
        for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
        return rank_ == 0 ? 0 : n;
    }

    bool operator==(const Shape& other) const {
        if (rank_ != other.rank_) return false;
        for (std::size_t i = 0; i < rank_; ++i)
            if (dims_[i] != other.dims_[i]) return false;
        return true;
    }
    bool operator!=(const Shape& other) const { return !(*this == other); }

    std::string str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < rank_; ++i) {
            if (i) s += ", ";
            s += std::to_string(dims_[i]);
        }
        return s + "]";
    }

private:
    void assign(std::span<const std::size_t> extents) {
        if (extents.empty() || extents.size() > kMaxRank)
            throw ShapeError("shape rank must be 1.." + std::to_string(kMaxRank) +
                             ", got " + std::to_string(extents.size()));
        rank_ = extents.size();
        for (std::size_t i = 0; i < rank_; ++i) {
            if (extents[i] == 0) throw ShapeError("shape extents must be >= 1");
            dims_[i] = extents[i];
        }
    }

    std::array<std::size_t, kMaxRank> dims_{};
    std::size_t rank_ = 0;
};

} // namespace vscg
