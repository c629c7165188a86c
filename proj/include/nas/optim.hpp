#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "nas/common.hpp"

namespace nas {

struct AdamState {
    std::vector<double> m, v;
    long step = 0;
    double lr = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    explicit AdamState(size_t n = 0, double lr_ = 0.001) : m(n, 0.0), v(n, 0.0), lr(lr_) {}
};

// Standard Adam with bias correction. Throws on non-finite gradient entries.
inline void adam_update(std::vector<double>& params, AdamState& st, std::span<const double> grad) {
    if (params.size() != grad.size() || params.size() != st.m.size())
        throw Error("adam_update: size mismatch");
    st.step += 1;
    const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (size_t i = 0; i < params.size(); ++i) {
        double g = grad[i];
        if (!std::isfinite(g)) throw Error("adam_update: non-finite gradient");
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
        double mhat = st.m[i] / c1;
        double vhat = st.v[i] / c2;
        params[i] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
    }
}

}  // namespace nas
