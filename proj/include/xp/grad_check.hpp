#pragma once

#include <algorithm>
#include <functional>
#include <numeric>
#include <vector>

#include "xp/ops.hpp"
#include "xp/random.hpp"
#include "xp/tensor.hpp"

namespace xp {

// Compares the tape gradient of a scalar function against central finite
// differences, coordinate by coordinate. Returns the max relative error with
// the denominator floored at 1 so near-zero gradients do not blow the ratio up.
// When max_coords is smaller than the tensor, a seeded random subset of
// coordinates is probed.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double eps, std::size_t max_coords = SIZE_MAX,
                         std::uint64_t pick_seed = 0) {
    if (!(eps > 0.0) || eps > 1e-3)
        throw std::invalid_argument("xp: grad_check eps must be in (0, 1e-3]");

    std::vector<double> analytic;
    {
        Tape tape;
        Tape::Scope scope(tape);
        Tensor xr = x.detached_copy();
        xr.set_requires_grad(true);
        Tensor y = f(xr);
        if (y.size() != 1)
            throw std::invalid_argument("xp: grad_check needs a scalar-valued function");
        tape.backward(y);
        analytic = xr.has_grad() ? xr.grad() : std::vector<double>(x.size(), 0.0);
    }

    auto eval = [&](const Tensor& xv) {
        Tensor y = f(xv);
        if (!std::isfinite(y.item()))
            throw std::runtime_error("xp: grad_check function non-finite near x");
        return y.item();
    };

    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
        Rng rng(pick_seed, "grad_check");
        rng.shuffle(coords);
        coords.resize(max_coords);
        std::sort(coords.begin(), coords.end());
    }

    double max_rel = 0.0;
    Tensor probe = x.detached_copy();
    for (std::size_t i : coords) {
        double orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        double fp = eval(probe);
        probe.data_mut()[i] = orig - eps;
        double fm = eval(probe);
        probe.data_mut()[i] = orig;
        double fd = (fp - fm) / (2.0 * eps);
        double denom = std::max({std::fabs(fd), std::fabs(analytic[i]), 1.0});
        max_rel = std::max(max_rel, std::fabs(analytic[i] - fd) / denom);
    }
    return max_rel;
}

}  // namespace xp
