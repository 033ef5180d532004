#pragma once

// Finite-difference gradient oracle for the autodiff engine. Central
// differences with the quotient accumulated in double; forward evaluations
// run in float32, so each FD component carries irreducible rounding noise of
// about |loss| * eps32 / h. Components are compared as
//   |analytic - fd| <= rtol * max(|analytic|, |fd|) + noise_floor
// where noise_floor tracks that rounding bound. Checks stay independent of
// the tape internals: the numeric side never calls backward().

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "spg/rng.hpp"
#include "spg/tensor.hpp"

namespace spg::testing {

struct GradCheck {
    bool ok = true;
    double max_rel = 0.0;     // worst relative mismatch over checked components
    int checked = 0;
    std::string detail;       // first failure description
};

// `loss_fn` must be a pure function of the parameter values (plus constants):
// it is called once under a tape for the analytic gradient and repeatedly
// without a tape for the numeric probes.
// `noise_mult` scales the rounding-noise floor: leave at 4 for single
// primitives; deep compositions accumulate forward rounding across many ops
// and need a larger allowance (the floor is a property of the float32
// oracle, not of the gradients under test).
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn,
                                 std::vector<Tensor*> params, double rtol,
                                 double h = 1e-3, int max_per_tensor = -1,
                                 uint64_t probe_seed = 0x5eed,
                                 double noise_mult = 4.0) {
    GradCheck result;

    std::vector<std::vector<float>> grads;
    double loss_mag = 0.0;
    {
        Tape tape;
        Tensor loss = loss_fn();
        loss_mag = std::fabs(loss.item());
        tape.backward(loss);
        for (Tensor* p : params) {
            const std::vector<float>* g = tape.grad(*p);
            grads.push_back(g ? *g : std::vector<float>(static_cast<size_t>(p->numel()), 0.0f));
        }
    }

    // float32 forward rounding bound on a central-difference component
    double noise_floor = noise_mult * (loss_mag + 1.0) * 1.19e-7 / h;

    Rng pick(probe_seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor* p = params[pi];
        int64_t n = p->numel();
        std::vector<int64_t> idx;
        if (max_per_tensor > 0 && n > max_per_tensor) {
            for (int k = 0; k < max_per_tensor; ++k)
                idx.push_back(static_cast<int64_t>(pick.below(static_cast<uint64_t>(n))));
        } else {
            for (int64_t k = 0; k < n; ++k) idx.push_back(k);
        }
        for (int64_t i : idx) {
            auto probe = [&](double step) {
                float saved = p->ptr()[i];
                p->ptr()[i] = saved + static_cast<float>(step);
                double lp = static_cast<double>(loss_fn().item());
                p->ptr()[i] = saved - static_cast<float>(step);
                double lm = static_cast<double>(loss_fn().item());
                p->ptr()[i] = saved;
                return (lp - lm) / (2.0 * step);
            };
            double an = grads[pi][static_cast<size_t>(i)];
            double fd = probe(h);
            double floor = noise_floor;
            double err = std::fabs(an - fd);
            double denom = std::max(std::fabs(an), std::fabs(fd));
            if (err > rtol * denom + floor) {
                // Truncation check: an O(h^2) error shrinks 16x at h/4 while
                // a wrong analytic gradient stays put. The rounding floor
                // grows with 1/step.
                fd = probe(h / 4.0);
                floor = noise_floor * 4.0;
                err = std::fabs(an - fd);
                denom = std::max(std::fabs(an), std::fabs(fd));
            }
            double rel = denom > 0.0 ? err / denom : 0.0;
            ++result.checked;
            if (err > rtol * denom + floor) {
                result.ok = false;
                if (result.detail.empty()) {
                    std::ostringstream os;
                    os << "param " << pi << "[" << i << "]: analytic " << an
                       << " vs fd " << fd << " (rel " << rel << ", floor "
                       << floor << ")";
                    result.detail = os.str();
                }
            }
            if (denom > floor) result.max_rel = std::max(result.max_rel, rel);
        }
    }
    return result;
}

// random tensor with entries away from zero (keeps relu/maxpool probes off
// their kinks)
inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = 0.2,
                            double hi = 1.5, bool signed_values = true) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (float& v : t.vec()) {
        double mag = rng.uniform(lo, hi);
        double sign = signed_values && rng.uniform() < 0.5 ? -1.0 : 1.0;
        v = static_cast<float>(sign * mag);
    }
    return t;
}

} // namespace spg::testing
