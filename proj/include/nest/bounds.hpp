#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>

#include "nest/errors.hpp"

namespace nest {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Axis-aligned box in native stimulus units.
struct Bounds {
    Vector low;
    Vector high;

    Bounds() = default;
    Bounds(Vector lo, Vector hi) : low(std::move(lo)), high(std::move(hi)) {}

    static Bounds uniform(int dim, double lo, double hi) {
        return Bounds(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
    }

    int dim() const { return static_cast<int>(low.size()); }
    Vector span() const { return high - low; }

    /// Throws invalid-bounds when the box is empty, inverted or degenerate.
    void validate() const {
        if (low.size() == 0 || low.size() != high.size())
            fail(ErrorKind::InvalidBounds, "bounds must be nonempty with matching low/high lengths");
        for (Eigen::Index i = 0; i < low.size(); ++i) {
            if (!std::isfinite(low[i]) || !std::isfinite(high[i]))
                fail(ErrorKind::InvalidBounds, "bounds must be finite (dimension " + std::to_string(i) + ")");
            if (!(low[i] < high[i]))
                fail(ErrorKind::InvalidBounds, "degenerate bounds in dimension " + std::to_string(i));
        }
    }

    bool contains(const Vector& x, double tol = 0.0) const {
        if (x.size() != low.size()) return false;
        for (Eigen::Index i = 0; i < x.size(); ++i)
            if (!(x[i] >= low[i] - tol && x[i] <= high[i] + tol)) return false;
        return true;
    }

    Vector clamp(const Vector& x) const { return x.cwiseMax(low).cwiseMin(high); }

    Vector from_unit(const Vector& u) const { return low + u.cwiseProduct(span()); }
    Vector to_unit(const Vector& x) const { return (x - low).cwiseQuotient(span()); }
};

}  // namespace nest
