#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "strokeseg/nn.hpp"
#include "strokeseg/tensor.hpp"

// Training losses: cross-entropy, boundary-weighted NLL, Lovász-Softmax and
// the relativistic-average adversarial pair. Every function optionally
// returns its analytic gradient; the finite-difference suite instantiates
// these at double precision.

namespace strokeseg::losses {

struct LossWeights {
    float ce = 1.0f;
    float ls = 1.0f;
    float bd = 1.0f;
    float adv = 0.1f;

    void validate() const {
        if (!(ce > 0)) throw InvalidConfig("LossWeights: lambda_ce must be > 0");
        for (float v : {ce, ls, bd, adv})
            if (!std::isfinite(v) || v < 0)
                throw InvalidConfig("LossWeights: weights must be finite and >= 0");
    }
};

struct LossReport {
    double ce = 0, ls = 0, bd = 0;
    double adv_g = 0, adv_d_core = 0, adv_d_pen = 0, adv_d_pair = 0;
    double total = 0;
    LossWeights weights;
};

namespace detail {

template <typename T>
T softplus(T z) {
    return std::max(z, T{0}) + std::log1p(std::exp(-std::abs(z)));
}

template <typename T>
T sigmoid(T z) {
    return z >= T{0} ? T{1} / (T{1} + std::exp(-z)) : std::exp(z) / (T{1} + std::exp(z));
}

template <typename T>
TensorT<T> as_batched(const TensorT<T>& t) {
    TensorT<T> b = t;
    if (t.rank() == 3) b.reshape({1, t.dim(0), t.dim(1), t.dim(2)});
    return b;
}

inline IntTensor as_batched_labels(const IntTensor& t) {
    IntTensor b = t;
    if (t.rank() == 2) b.reshape({1, t.dim(0), t.dim(1)});
    return b;
}

template <typename T>
void check_inputs(const TensorT<T>& scores4d, const IntTensor& labels3d) {
    if (scores4d.rank() != 4 || labels3d.rank() != 3)
        throw ShapeError("loss: expected (N,C,H,W) scores and (N,H,W) labels");
    if (scores4d.dim(0) != labels3d.dim(0) || scores4d.dim(2) != labels3d.dim(1) ||
        scores4d.dim(3) != labels3d.dim(2))
        throw ShapeError("loss: scores/labels shape mismatch");
    const int c = scores4d.dim(1);
    for (std::int64_t i = 0; i < labels3d.numel(); ++i)
        if (labels3d[i] < 0 || labels3d[i] >= c)
            throw ShapeError("loss: label out of range [0," + std::to_string(c) + ")");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Cross-entropy: mean over all pixels of -log softmax(logits)[label].
// ---------------------------------------------------------------------------

template <typename T>
T cross_entropy(const TensorT<T>& logits_in, const IntTensor& labels_in,
                TensorT<T>* glogits = nullptr) {
    const TensorT<T> logits = detail::as_batched(logits_in);
    const IntTensor labels = detail::as_batched_labels(labels_in);
    detail::check_inputs(logits, labels);

    const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const double npix = static_cast<double>(n) * plane;

    if (glogits) *glogits = TensorT<T>(logits_in.shape());
    double loss = 0;
    std::vector<T> p(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const T* ls = logits.data() + static_cast<std::int64_t>(i) * c * plane;
        const std::int32_t* ys = labels.data() + static_cast<std::int64_t>(i) * plane;
        T* gs = glogits ? glogits->data() + static_cast<std::int64_t>(i) * c * plane : nullptr;
        for (std::int64_t j = 0; j < plane; ++j) {
            T mx = ls[j];
            for (int ch = 1; ch < c; ++ch) mx = std::max(mx, ls[ch * plane + j]);
            T sum = T{0};
            for (int ch = 0; ch < c; ++ch) {
                p[ch] = std::exp(ls[ch * plane + j] - mx);
                sum += p[ch];
            }
            const T logsum = std::log(sum) + mx;
            loss += static_cast<double>(logsum - ls[ys[j] * plane + j]);
            if (gs) {
                for (int ch = 0; ch < c; ++ch) {
                    const T prob = p[ch] / sum;
                    gs[ch * plane + j] =
                        static_cast<T>((prob - (ch == ys[j] ? T{1} : T{0})) / npix);
                }
            }
        }
    }
    return static_cast<T>(loss / npix);
}

// ---------------------------------------------------------------------------
// Boundary-weighted NLL over band pixels (weights > 1), normalized by band
// size; zero when the band is empty. Takes log-softmax outputs.
// ---------------------------------------------------------------------------

template <typename T>
T boundary_nll(const TensorT<T>& log_probs_in, const IntTensor& labels_in,
               const TensorT<T>& weights_in, TensorT<T>* glog_probs = nullptr) {
    const TensorT<T> log_probs = detail::as_batched(log_probs_in);
    const IntTensor labels = detail::as_batched_labels(labels_in);
    TensorT<T> weights = weights_in;
    if (weights.rank() == 2) weights.reshape({1, weights.dim(0), weights.dim(1)});
    detail::check_inputs(log_probs, labels);
    if (weights.shape() != labels.shape())
        throw ShapeError("boundary_nll: weights/labels shape mismatch");

    const int n = log_probs.dim(0), c = log_probs.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(log_probs.dim(2)) * log_probs.dim(3);

    std::int64_t band = 0;
    for (std::int64_t i = 0; i < weights.numel(); ++i)
        if (weights[i] > T{1}) ++band;

    if (glog_probs) *glog_probs = TensorT<T>(log_probs_in.shape());
    if (band == 0) return T{0};

    double loss = 0;
    for (int i = 0; i < n; ++i) {
        const T* lp = log_probs.data() + static_cast<std::int64_t>(i) * c * plane;
        const std::int32_t* ys = labels.data() + static_cast<std::int64_t>(i) * plane;
        const T* ws = weights.data() + static_cast<std::int64_t>(i) * plane;
        T* gs = glog_probs ? glog_probs->data() + static_cast<std::int64_t>(i) * c * plane : nullptr;
        for (std::int64_t j = 0; j < plane; ++j) {
            if (!(ws[j] > T{1})) continue;
            loss += -static_cast<double>(ws[j]) * lp[ys[j] * plane + j];
            if (gs) gs[ys[j] * plane + j] = -ws[j] / static_cast<T>(band);
        }
    }
    return static_cast<T>(loss / static_cast<double>(band));
}

/// Same loss expressed on raw logits (used by the training loop);
/// gradient flows through the log-softmax.
template <typename T>
T boundary_nll_logits(const TensorT<T>& logits_in, const IntTensor& labels_in,
                      const TensorT<T>& weights_in, TensorT<T>* glogits = nullptr) {
    const TensorT<T> logits = detail::as_batched(logits_in);
    const IntTensor labels = detail::as_batched_labels(labels_in);
    TensorT<T> weights = weights_in;
    if (weights.rank() == 2) weights.reshape({1, weights.dim(0), weights.dim(1)});
    detail::check_inputs(logits, labels);

    const int n = logits.dim(0), c = logits.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(logits.dim(2)) * logits.dim(3);

    std::int64_t band = 0;
    for (std::int64_t i = 0; i < weights.numel(); ++i)
        if (weights[i] > T{1}) ++band;
    if (glogits) *glogits = TensorT<T>(logits_in.shape());
    if (band == 0) return T{0};

    double loss = 0;
    std::vector<T> p(static_cast<size_t>(c));
    for (int i = 0; i < n; ++i) {
        const T* ls = logits.data() + static_cast<std::int64_t>(i) * c * plane;
        const std::int32_t* ys = labels.data() + static_cast<std::int64_t>(i) * plane;
        const T* ws = weights.data() + static_cast<std::int64_t>(i) * plane;
        T* gs = glogits ? glogits->data() + static_cast<std::int64_t>(i) * c * plane : nullptr;
        for (std::int64_t j = 0; j < plane; ++j) {
            if (!(ws[j] > T{1})) continue;
            T mx = ls[j];
            for (int ch = 1; ch < c; ++ch) mx = std::max(mx, ls[ch * plane + j]);
            T sum = T{0};
            for (int ch = 0; ch < c; ++ch) {
                p[ch] = std::exp(ls[ch * plane + j] - mx);
                sum += p[ch];
            }
            const T logsum = std::log(sum) + mx;
            loss += static_cast<double>(ws[j]) *
                    static_cast<double>(logsum - ls[ys[j] * plane + j]);
            if (gs) {
                const T scale = ws[j] / static_cast<T>(band);
                for (int ch = 0; ch < c; ++ch)
                    gs[ch * plane + j] =
                        scale * (p[ch] / sum - (ch == ys[j] ? T{1} : T{0}));
            }
        }
    }
    return static_cast<T>(loss / static_cast<double>(band));
}

// ---------------------------------------------------------------------------
// Lovász-Softmax
// ---------------------------------------------------------------------------

/// Gradient of the Jaccard-loss Lovász extension for a 0/1 vector already
/// sorted by descending error. Returns all zeros when the class is absent.
template <typename T>
std::vector<T> lovasz_grad(const std::vector<int>& gt_sorted) {
    const size_t n = gt_sorted.size();
    std::vector<T> g(n, T{0});
    std::int64_t support = 0;
    for (int v : gt_sorted) support += v;
    if (support == 0) return g;

    std::int64_t cum_gt = 0, cum_miss = 0;
    T prev = T{0};
    for (size_t i = 0; i < n; ++i) {
        cum_gt += gt_sorted[i];
        cum_miss += 1 - gt_sorted[i];
        const T inter = static_cast<T>(support - cum_gt);
        const T uni = static_cast<T>(support + cum_miss);
        const T jac = T{1} - inter / uni;
        g[i] = jac - prev;
        prev = jac;
    }
    return g;
}

/// Mean over classes present in `labels` of <sorted errors, lovasz_grad>.
/// `probs` are softmax outputs; the sorting permutation is treated as a
/// constant, which makes the surrogate piecewise linear in probs.
template <typename T>
T lovasz_softmax(const TensorT<T>& probs_in, const IntTensor& labels_in,
                 TensorT<T>* gprobs = nullptr) {
    const TensorT<T> probs = detail::as_batched(probs_in);
    const IntTensor labels = detail::as_batched_labels(labels_in);
    detail::check_inputs(probs, labels);

    const int n = probs.dim(0), c = probs.dim(1);
    const std::int64_t plane = static_cast<std::int64_t>(probs.dim(2)) * probs.dim(3);
    const std::int64_t npix = static_cast<std::int64_t>(n) * plane;

    if (gprobs) *gprobs = TensorT<T>(probs_in.shape());

    std::vector<bool> present(static_cast<size_t>(c), false);
    for (std::int64_t i = 0; i < labels.numel(); ++i) present[labels[i]] = true;
    int n_present = 0;
    for (bool b : present) n_present += b;
    if (n_present == 0) return T{0};

    std::vector<T> errors(static_cast<size_t>(npix));
    std::vector<int> gt(static_cast<size_t>(npix));
    std::vector<std::int64_t> order(static_cast<size_t>(npix));

    double loss = 0;
    for (int cls = 0; cls < c; ++cls) {
        if (!present[cls]) continue;
        // flatten batch: pixel index p = i*plane + j, channel cls
        for (int i = 0; i < n; ++i) {
            const T* ps = probs.data() + (static_cast<std::int64_t>(i) * c + cls) * plane;
            const std::int32_t* ys = labels.data() + static_cast<std::int64_t>(i) * plane;
            for (std::int64_t j = 0; j < plane; ++j) {
                const std::int64_t p = i * plane + j;
                gt[p] = (ys[j] == cls) ? 1 : 0;
                errors[p] = std::abs(static_cast<T>(gt[p]) - ps[j]);
            }
        }
        std::iota(order.begin(), order.end(), std::int64_t{0});
        std::stable_sort(order.begin(), order.end(),
                         [&](std::int64_t a, std::int64_t b) { return errors[a] > errors[b]; });

        std::vector<int> gt_sorted(static_cast<size_t>(npix));
        for (std::int64_t i = 0; i < npix; ++i) gt_sorted[i] = gt[order[i]];
        const std::vector<T> g = lovasz_grad<T>(gt_sorted);

        double cls_loss = 0;
        for (std::int64_t i = 0; i < npix; ++i)
            cls_loss += static_cast<double>(errors[order[i]]) * g[i];
        loss += cls_loss;

        if (gprobs) {
            for (std::int64_t i = 0; i < npix; ++i) {
                const std::int64_t p = order[i];
                const int sample = static_cast<int>(p / plane);
                const std::int64_t j = p % plane;
                // d|gt - p|/dp = -1 on the class support, +1 off it
                const T sign = gt[p] ? T{-1} : T{1};
                (*gprobs)[(static_cast<std::int64_t>(sample) * c + cls) * plane + j] +=
                    sign * g[i] / static_cast<T>(n_present);
            }
        }
    }
    return static_cast<T>(loss / n_present);
}

// ---------------------------------------------------------------------------
// Relativistic-average adversarial losses on pre-sigmoid scores.
// -log sigmoid(z) is evaluated as softplus(-z).
// ---------------------------------------------------------------------------

template <typename T>
T ragan_d_loss(const TensorT<T>& real, const TensorT<T>& fake, TensorT<T>* greal = nullptr,
               TensorT<T>* gfake = nullptr) {
    const std::int64_t nr = real.numel(), nf = fake.numel();
    if (nr == 0 || nf == 0) throw ShapeError("ragan_d_loss: empty score vector");
    double mr = 0, mf = 0;
    for (std::int64_t i = 0; i < nr; ++i) mr += real[i];
    for (std::int64_t j = 0; j < nf; ++j) mf += fake[j];
    mr /= static_cast<double>(nr);
    mf /= static_cast<double>(nf);

    if (greal) *greal = TensorT<T>(real.shape());
    if (gfake) *gfake = TensorT<T>(fake.shape());

    // loss = mean_i SP(mf - r_i) + mean_j SP(f_j - mr)
    double loss_r = 0, loss_f = 0, sum_sig_r = 0, sum_sig_f = 0;
    for (std::int64_t i = 0; i < nr; ++i) {
        const T z = static_cast<T>(mf) - real[i];
        loss_r += static_cast<double>(detail::softplus(z));
        const T s = detail::sigmoid(z);
        sum_sig_r += s;
        if (greal) (*greal)[i] = -s / static_cast<T>(nr);
    }
    for (std::int64_t j = 0; j < nf; ++j) {
        const T z = fake[j] - static_cast<T>(mr);
        loss_f += static_cast<double>(detail::softplus(z));
        const T s = detail::sigmoid(z);
        sum_sig_f += s;
        if (gfake) (*gfake)[j] = s / static_cast<T>(nf);
    }
    // cross terms through the batch means
    if (greal)
        for (std::int64_t i = 0; i < nr; ++i)
            (*greal)[i] += static_cast<T>(-sum_sig_f / (static_cast<double>(nf) * nr));
    if (gfake)
        for (std::int64_t j = 0; j < nf; ++j)
            (*gfake)[j] += static_cast<T>(sum_sig_r / (static_cast<double>(nr) * nf));
    return static_cast<T>(loss_r / static_cast<double>(nr) + loss_f / static_cast<double>(nf));
}

template <typename T>
T ragan_g_loss(const TensorT<T>& real, const TensorT<T>& fake, TensorT<T>* gfake = nullptr) {
    // structural identity: G(r, f) == D(f, r), with gradients to fake only
    TensorT<T> gf;
    const T loss = ragan_d_loss<T>(fake, real, gfake ? &gf : nullptr, nullptr);
    if (gfake) *gfake = std::move(gf);
    return loss;
}

// ---------------------------------------------------------------------------
// Composite
// ---------------------------------------------------------------------------

template <typename T>
T composite_loss(T ce, T ls, T bd, T adv_g, const LossWeights& w, LossReport* report = nullptr) {
    w.validate();
    const auto check = [](T v, const char* term) {
        if (!std::isfinite(static_cast<double>(v)))
            throw NonFiniteLoss(term, "composite_loss");
    };
    check(ce, "ce");
    check(ls, "ls");
    check(bd, "bd");
    check(adv_g, "adv_g");
    const T total = static_cast<T>(w.ce) * ce + static_cast<T>(w.ls) * ls +
                    static_cast<T>(w.bd) * bd + static_cast<T>(w.adv) * adv_g;
    check(total, "total");
    if (report) {
        report->ce = ce;
        report->ls = ls;
        report->bd = bd;
        report->adv_g = adv_g;
        report->total = total;
        report->weights = w;
    }
    return total;
}

}  // namespace strokeseg::losses
