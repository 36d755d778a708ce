#pragma once

// Central finite-difference verification of reverse-mode gradients.
// Per-element relative error is |ad - fd| / max(1, |ad|, |fd|), so it decays
// to an absolute comparison for vanishing gradients. Differences accumulate
// in float64; the forward pass itself stays float32.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace chroma {

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    double eps = 0.0;
    double tol = 0.0;
    int worst_input = -1;
    size_t worst_index = 0;
    double worst_autodiff = 0.0;
    double worst_numeric = 0.0;

    std::string summary() const {
        return std::string(pass ? "pass" : "FAIL") + " max_rel_err=" + std::to_string(max_rel_err) +
               " (input " + std::to_string(worst_input) + "[" + std::to_string(worst_index) +
               "] ad=" + std::to_string(worst_autodiff) + " fd=" + std::to_string(worst_numeric) + ")";
    }
};

inline GradCheckReport gradcheck(const std::function<Tensor()>& f, const std::vector<Tensor*>& inputs,
                                 double eps = 1e-3, double tol = 1e-3) {
    for (Tensor* t : inputs) {
        t->set_requires_grad(true);
        t->node()->grad.clear();  // stale gradients would contaminate the autodiff pass
    }

    std::vector<std::vector<float>> ad(inputs.size());
    {
        GradTape tape;
        Tensor loss = f();
        if (loss.numel() != 1) throw std::logic_error("gradcheck: f must be scalar-valued");
        // a loss disconnected from every input never joins the tape; its
        // gradients are identically zero
        if (loss.node()->tape != nullptr) backward(loss);
        for (size_t i = 0; i < inputs.size(); ++i)
            ad[i] = inputs[i]->has_grad() ? inputs[i]->grad() : std::vector<float>(inputs[i]->numel(), 0.0f);
    }

    GradCheckReport rep;
    rep.eps = eps;
    rep.tol = tol;
    for (size_t i = 0; i < inputs.size(); ++i) {
        auto& vals = inputs[i]->data();
        for (size_t j = 0; j < vals.size(); ++j) {
            float saved = vals[j];
            vals[j] = saved + float(eps);
            double f_plus = f().item();
            vals[j] = saved - float(eps);
            double f_minus = f().item();
            vals[j] = saved;
            double fd = (f_plus - f_minus) / (2.0 * eps);
            double a = ad[i][j];
            double denom = std::max({1.0, std::abs(a), std::abs(fd)});
            double rel = std::abs(a - fd) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_input = int(i);
                rep.worst_index = j;
                rep.worst_autodiff = a;
                rep.worst_numeric = fd;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace chroma
