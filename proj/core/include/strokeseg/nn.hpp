#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "strokeseg/tensor.hpp"

// Layer toolkit for the segmenter and discriminators. Layers cache what
// their backward pass needs on a small stack: forward(..., cache=true)
// pushes, backward() pops, so nested real/fake passes through one model
// work as long as backward order is LIFO.

namespace strokeseg::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Mat<T>>;

template <typename T>
struct ParamT {
    std::string name;
    TensorT<T> value;
    TensorT<T> grad;

    void zero_grad() { grad.fill(T{0}); }
};

template <typename T>
struct ParamGroup {
    std::vector<ParamT<T>*> params;

    void zero_grad() {
        for (auto* p : params) p->zero_grad();
    }
    std::int64_t count() const {
        std::int64_t n = 0;
        for (auto* p : params) n += p->value.numel();
        return n;
    }
};

// ---------------------------------------------------------------------------
// im2col / col2im
// ---------------------------------------------------------------------------

template <typename T>
void im2col(const T* x, int ch, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
    const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;
    for (int c = 0; c < ch; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* row = col + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * plane;
                const T* src = x + static_cast<std::int64_t>(c) * h * w;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    T* dst = row + static_cast<std::int64_t>(oh) * wo;
                    if (ih < 0 || ih >= h) {
                        std::fill(dst, dst + wo, T{0});
                        continue;
                    }
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        dst[ow] = (iw >= 0 && iw < w) ? src[static_cast<std::int64_t>(ih) * w + iw]
                                                      : T{0};
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const T* col, int ch, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* x) {
    const std::int64_t plane = static_cast<std::int64_t>(ho) * wo;
    for (int c = 0; c < ch; ++c) {
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* row = col + ((static_cast<std::int64_t>(c) * k + ki) * k + kj) * plane;
                T* dst = x + static_cast<std::int64_t>(c) * h * w;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= h) continue;
                    const T* src = row + static_cast<std::int64_t>(oh) * wo;
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < w) dst[static_cast<std::int64_t>(ih) * w + iw] += src[ow];
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

template <typename T>
class Conv2dT {
public:
    Conv2dT(int in_ch, int out_ch, int ksize, int stride, int pad, Rng& rng,
            const std::string& name)
        : in_ch_(in_ch), out_ch_(out_ch), k_(ksize), stride_(stride), pad_(pad) {
        weight_.name = name + ".weight";
        bias_.name = name + ".bias";
        const int fan_in = in_ch * ksize * ksize;
        const T bound = static_cast<T>(std::sqrt(6.0 / fan_in));
        weight_.value = uniform_tensor<T>({out_ch, in_ch, ksize, ksize}, -bound, bound, rng);
        weight_.grad = TensorT<T>::zeros({out_ch, in_ch, ksize, ksize});
        bias_.value = TensorT<T>::zeros({out_ch});
        bias_.grad = TensorT<T>::zeros({out_ch});
    }

    TensorT<T> forward(const TensorT<T>& x, bool cache) {
        if (x.rank() != 4 || x.dim(1) != in_ch_)
            throw ShapeError("Conv2d " + weight_.name + ": expected (N," +
                             std::to_string(in_ch_) + ",H,W), got " +
                             TensorT<T>::shape_str(x.shape()));
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int ho = out_size(h), wo = out_size(w);
        if (ho <= 0 || wo <= 0) throw ShapeError("Conv2d: input too small");

        TensorT<T> y({n, out_ch_, ho, wo});
        const std::int64_t colsz = static_cast<std::int64_t>(in_ch_) * k_ * k_ * ho * wo;
        std::vector<T> col(static_cast<size_t>(colsz));
        ConstMatMap<T> wmat(weight_.value.data(), out_ch_, in_ch_ * k_ * k_);
        for (int i = 0; i < n; ++i) {
            im2col(x.data() + sample_off(x, i), in_ch_, h, w, k_, stride_, pad_, ho, wo,
                   col.data());
            ConstMatMap<T> cmat(col.data(), in_ch_ * k_ * k_, ho * wo);
            MatMap<T> ymat(y.data() + sample_off(y, i), out_ch_, ho * wo);
            ymat.noalias() = wmat * cmat;
            for (int c = 0; c < out_ch_; ++c) ymat.row(c).array() += bias_.value[c];
        }
        if (cache) cached_inputs_.push_back(x);
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy, bool param_grads = true) {
        if (cached_inputs_.empty()) throw Error("Conv2d::backward without cached forward");
        TensorT<T> x = std::move(cached_inputs_.back());
        cached_inputs_.pop_back();

        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const int ho = gy.dim(2), wo = gy.dim(3);
        TensorT<T> gx(x.shape());
        const std::int64_t colsz = static_cast<std::int64_t>(in_ch_) * k_ * k_ * ho * wo;
        std::vector<T> col(static_cast<size_t>(colsz));

        ConstMatMap<T> wmat(weight_.value.data(), out_ch_, in_ch_ * k_ * k_);
        MatMap<T> gwmat(weight_.grad.data(), out_ch_, in_ch_ * k_ * k_);
        for (int i = 0; i < n; ++i) {
            ConstMatMap<T> gymat(gy.data() + sample_off(gy, i), out_ch_, ho * wo);
            if (param_grads) {
                im2col(x.data() + sample_off(x, i), in_ch_, h, w, k_, stride_, pad_, ho, wo,
                       col.data());
                ConstMatMap<T> cmat(col.data(), in_ch_ * k_ * k_, ho * wo);
                gwmat.noalias() += gymat * cmat.transpose();
                for (int c = 0; c < out_ch_; ++c) bias_.grad[c] += gymat.row(c).sum();
            }
            MatMap<T> gcmat(col.data(), in_ch_ * k_ * k_, ho * wo);
            gcmat.noalias() = wmat.transpose() * gymat;
            col2im_add(col.data(), in_ch_, h, w, k_, stride_, pad_, ho, wo,
                       gx.data() + sample_off(gx, i));
        }
        return gx;
    }

    void collect(ParamGroup<T>& g) {
        g.params.push_back(&weight_);
        g.params.push_back(&bias_);
    }

    ParamT<T>& weight() { return weight_; }
    ParamT<T>& bias() { return bias_; }
    int out_channels() const { return out_ch_; }

private:
    int out_size(int s) const { return (s + 2 * pad_ - k_) / stride_ + 1; }
    static std::int64_t sample_off(const TensorT<T>& t, int i) {
        return static_cast<std::int64_t>(i) * t.dim(1) * t.dim(2) * t.dim(3);
    }

    int in_ch_, out_ch_, k_, stride_, pad_;
    ParamT<T> weight_, bias_;
    std::vector<TensorT<T>> cached_inputs_;
};

// ---------------------------------------------------------------------------
// BatchNorm2d
// ---------------------------------------------------------------------------

template <typename T>
class BatchNorm2dT {
public:
    BatchNorm2dT(int channels, const std::string& name, T momentum = static_cast<T>(0.1),
                 T eps = static_cast<T>(1e-5))
        : ch_(channels), momentum_(momentum), eps_(eps) {
        gamma_.name = name + ".gamma";
        beta_.name = name + ".beta";
        gamma_.value = TensorT<T>::full({channels}, T{1});
        gamma_.grad = TensorT<T>::zeros({channels});
        beta_.value = TensorT<T>::zeros({channels});
        beta_.grad = TensorT<T>::zeros({channels});
        running_mean_ = TensorT<T>::zeros({channels});
        running_var_ = TensorT<T>::full({channels}, T{1});
    }

    TensorT<T> forward(const TensorT<T>& x, bool train, bool cache) {
        if (x.rank() != 4 || x.dim(1) != ch_) throw ShapeError("BatchNorm2d: bad input shape");
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t m = static_cast<std::int64_t>(n) * h * w;
        TensorT<T> y(x.shape());

        if (!train) {
            for (int c = 0; c < ch_; ++c) {
                const T inv = T{1} / std::sqrt(running_var_[c] + eps_);
                const T g = gamma_.value[c] * inv;
                const T b = beta_.value[c] - running_mean_[c] * g;
                for_plane(x, y, c, [g, b](T v) { return g * v + b; });
            }
            return y;
        }

        Entry e;
        e.inv_std = TensorT<T>::zeros({ch_});
        e.x_hat = TensorT<T>(x.shape());
        for (int c = 0; c < ch_; ++c) {
            double sum = 0, sq = 0;
            visit_plane(x, c, [&](T v) {
                sum += v;
                sq += static_cast<double>(v) * v;
            });
            const double mean = sum / static_cast<double>(m);
            const double var = std::max(0.0, sq / static_cast<double>(m) - mean * mean);
            const T inv = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps_)));
            e.inv_std[c] = inv;
            running_mean_[c] =
                (T{1} - momentum_) * running_mean_[c] + momentum_ * static_cast<T>(mean);
            running_var_[c] =
                (T{1} - momentum_) * running_var_[c] + momentum_ * static_cast<T>(var);

            const T g = gamma_.value[c], b = beta_.value[c], mu = static_cast<T>(mean);
            const std::int64_t plane = static_cast<std::int64_t>(h) * w;
            for (int i = 0; i < n; ++i) {
                const T* xs = x.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                T* xh = e.x_hat.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                T* ys = y.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    xh[p] = (xs[p] - mu) * inv;
                    ys[p] = g * xh[p] + b;
                }
            }
        }
        if (cache) cache_.push_back(std::move(e));
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy, bool param_grads = true) {
        if (cache_.empty()) throw Error("BatchNorm2d::backward without cached forward");
        Entry e = std::move(cache_.back());
        cache_.pop_back();

        const int n = gy.dim(0), h = gy.dim(2), w = gy.dim(3);
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        const double m = static_cast<double>(n) * h * w;
        TensorT<T> gx(gy.shape());
        for (int c = 0; c < ch_; ++c) {
            double sum_gy = 0, sum_gy_xh = 0;
            for (int i = 0; i < n; ++i) {
                const T* gys = gy.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                const T* xh = e.x_hat.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p) {
                    sum_gy += gys[p];
                    sum_gy_xh += static_cast<double>(gys[p]) * xh[p];
                }
            }
            if (param_grads) {
                beta_.grad[c] += static_cast<T>(sum_gy);
                gamma_.grad[c] += static_cast<T>(sum_gy_xh);
            }
            const T g_inv = gamma_.value[c] * e.inv_std[c];
            const T mean_gy = static_cast<T>(sum_gy / m);
            const T mean_gy_xh = static_cast<T>(sum_gy_xh / m);
            for (int i = 0; i < n; ++i) {
                const T* gys = gy.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                const T* xh = e.x_hat.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                T* gxs = gx.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
                for (std::int64_t p = 0; p < plane; ++p)
                    gxs[p] = g_inv * (gys[p] - mean_gy - xh[p] * mean_gy_xh);
            }
        }
        return gx;
    }

    void collect(ParamGroup<T>& g) {
        g.params.push_back(&gamma_);
        g.params.push_back(&beta_);
    }

    ParamT<T>& gamma() { return gamma_; }
    ParamT<T>& beta() { return beta_; }
    TensorT<T>& running_mean() { return running_mean_; }
    TensorT<T>& running_var() { return running_var_; }

private:
    struct Entry {
        TensorT<T> x_hat;
        TensorT<T> inv_std;
    };

    template <typename F>
    void visit_plane(const TensorT<T>& x, int c, F&& f) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int i = 0; i < n; ++i) {
            const T* p = x.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
            for (std::int64_t j = 0; j < plane; ++j) f(p[j]);
        }
    }

    template <typename F>
    void for_plane(const TensorT<T>& x, TensorT<T>& y, int c, F&& f) const {
        const int n = x.dim(0), h = x.dim(2), w = x.dim(3);
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int i = 0; i < n; ++i) {
            const T* ps = x.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
            T* pd = y.data() + (static_cast<std::int64_t>(i) * ch_ + c) * plane;
            for (std::int64_t j = 0; j < plane; ++j) pd[j] = f(ps[j]);
        }
    }

    int ch_;
    T momentum_, eps_;
    ParamT<T> gamma_, beta_;
    TensorT<T> running_mean_, running_var_;
    std::vector<Entry> cache_;
};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename T>
class LeakyReLUT {
public:
    explicit LeakyReLUT(T slope = T{0}) : slope_(slope) {}

    TensorT<T> forward(const TensorT<T>& x, bool cache) {
        TensorT<T> y(x.shape());
        for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] > T{0} ? x[i] : slope_ * x[i];
        if (cache) cache_.push_back(x);
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        if (cache_.empty()) throw Error("activation backward without cached forward");
        TensorT<T> x = std::move(cache_.back());
        cache_.pop_back();
        TensorT<T> gx(gy.shape());
        for (std::int64_t i = 0; i < gy.numel(); ++i)
            gx[i] = x[i] > T{0} ? gy[i] : slope_ * gy[i];
        return gx;
    }

private:
    T slope_;
    std::vector<TensorT<T>> cache_;
};

template <typename T>
using ReLUT = LeakyReLUT<T>;  // slope 0

// ---------------------------------------------------------------------------
// MaxPool2d (2x2, stride 2) with argmax indices for later unpooling
// ---------------------------------------------------------------------------

template <typename T>
struct PoolOut {
    TensorT<T> values;       // (N,C,H/2,W/2)
    IntTensor indices;       // flat h*W+w argmax per output element
    int in_h = 0, in_w = 0;  // spatial size the indices refer to
};

template <typename T>
class MaxPool2dT {
public:
    PoolOut<T> forward(const TensorT<T>& x, bool cache) {
        if (x.rank() != 4) throw ShapeError("MaxPool2d expects (N,C,H,W)");
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        if (h % 2 != 0 || w % 2 != 0) throw ShapeError("MaxPool2d: odd spatial size");
        const int ho = h / 2, wo = w / 2;
        PoolOut<T> out;
        out.values = TensorT<T>({n, c, ho, wo});
        out.indices = IntTensor({n, c, ho, wo});
        out.in_h = h;
        out.in_w = w;
        for (int i = 0; i < n; ++i) {
            for (int ch = 0; ch < c; ++ch) {
                const T* plane = x.data() + (static_cast<std::int64_t>(i) * c + ch) * h * w;
                T* op = out.values.data() + (static_cast<std::int64_t>(i) * c + ch) * ho * wo;
                std::int32_t* ip =
                    out.indices.data() + (static_cast<std::int64_t>(i) * c + ch) * ho * wo;
                for (int oh = 0; oh < ho; ++oh) {
                    for (int ow = 0; ow < wo; ++ow) {
                        int best = (2 * oh) * w + 2 * ow;
                        T bv = plane[best];
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx) {
                                const int idx = (2 * oh + dy) * w + (2 * ow + dx);
                                if (plane[idx] > bv) {
                                    bv = plane[idx];
                                    best = idx;
                                }
                            }
                        op[oh * wo + ow] = bv;
                        ip[oh * wo + ow] = best;
                    }
                }
            }
        }
        if (cache) cache_.push_back({out.indices, h, w});
        return out;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        if (cache_.empty()) throw Error("MaxPool2d::backward without cached forward");
        Entry e = std::move(cache_.back());
        cache_.pop_back();
        const int n = gy.dim(0), c = gy.dim(1), ho = gy.dim(2), wo = gy.dim(3);
        TensorT<T> gx({n, c, e.h, e.w});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const std::int64_t po = (static_cast<std::int64_t>(i) * c + ch);
                const T* gys = gy.data() + po * ho * wo;
                const std::int32_t* ip = e.indices.data() + po * ho * wo;
                T* gxs = gx.data() + po * e.h * e.w;
                for (int j = 0; j < ho * wo; ++j) gxs[ip[j]] += gys[j];
            }
        return gx;
    }

private:
    struct Entry {
        IntTensor indices;
        int h, w;
    };
    std::vector<Entry> cache_;
};

template <typename T>
class MaxUnpool2dT {
public:
    TensorT<T> forward(const TensorT<T>& x, const IntTensor& indices, int out_h, int out_w,
                       bool cache) {
        if (!x.shape().empty() && x.shape() != indices.shape())
            throw ShapeError("MaxUnpool2d: values/indices shape mismatch");
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        TensorT<T> y({n, c, out_h, out_w});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const std::int64_t po = (static_cast<std::int64_t>(i) * c + ch);
                const T* xs = x.data() + po * h * w;
                const std::int32_t* ip = indices.data() + po * h * w;
                T* ys = y.data() + po * out_h * out_w;
                for (int j = 0; j < h * w; ++j) ys[ip[j]] = xs[j];
            }
        if (cache) cache_.push_back({indices, h, w});
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        if (cache_.empty()) throw Error("MaxUnpool2d::backward without cached forward");
        Entry e = std::move(cache_.back());
        cache_.pop_back();
        const int n = gy.dim(0), c = gy.dim(1), oh = gy.dim(2), ow = gy.dim(3);
        TensorT<T> gx({n, c, e.h, e.w});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const std::int64_t po = (static_cast<std::int64_t>(i) * c + ch);
                const T* gys = gy.data() + po * oh * ow;
                const std::int32_t* ip = e.indices.data() + po * e.h * e.w;
                T* gxs = gx.data() + po * e.h * e.w;
                for (int j = 0; j < e.h * e.w; ++j) gxs[j] = gys[ip[j]];
            }
        return gx;
    }

private:
    struct Entry {
        IntTensor indices;
        int h, w;
    };
    std::vector<Entry> cache_;
};

// ---------------------------------------------------------------------------
// Linear + global average pooling (discriminator head)
// ---------------------------------------------------------------------------

template <typename T>
class LinearT {
public:
    LinearT(int in_f, int out_f, Rng& rng, const std::string& name) : in_(in_f), out_(out_f) {
        weight_.name = name + ".weight";
        bias_.name = name + ".bias";
        const T bound = static_cast<T>(std::sqrt(6.0 / in_f));
        weight_.value = uniform_tensor<T>({out_f, in_f}, -bound, bound, rng);
        weight_.grad = TensorT<T>::zeros({out_f, in_f});
        bias_.value = TensorT<T>::zeros({out_f});
        bias_.grad = TensorT<T>::zeros({out_f});
    }

    TensorT<T> forward(const TensorT<T>& x, bool cache) {
        if (x.rank() != 2 || x.dim(1) != in_) throw ShapeError("Linear: bad input shape");
        const int n = x.dim(0);
        TensorT<T> y({n, out_});
        ConstMatMap<T> xm(x.data(), n, in_), wm(weight_.value.data(), out_, in_);
        MatMap<T> ym(y.data(), n, out_);
        ym.noalias() = xm * wm.transpose();
        for (int i = 0; i < n; ++i)
            for (int o = 0; o < out_; ++o) ym(i, o) += bias_.value[o];
        if (cache) cache_.push_back(x);
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy, bool param_grads = true) {
        if (cache_.empty()) throw Error("Linear::backward without cached forward");
        TensorT<T> x = std::move(cache_.back());
        cache_.pop_back();
        const int n = x.dim(0);
        TensorT<T> gx({n, in_});
        ConstMatMap<T> gym(gy.data(), n, out_), xm(x.data(), n, in_),
            wm(weight_.value.data(), out_, in_);
        if (param_grads) {
            MatMap<T> gwm(weight_.grad.data(), out_, in_);
            gwm.noalias() += gym.transpose() * xm;
            for (int o = 0; o < out_; ++o) bias_.grad[o] += gym.col(o).sum();
        }
        MatMap<T> gxm(gx.data(), n, in_);
        gxm.noalias() = gym * wm;
        return gx;
    }

    void collect(ParamGroup<T>& g) {
        g.params.push_back(&weight_);
        g.params.push_back(&bias_);
    }

    ParamT<T>& weight() { return weight_; }
    ParamT<T>& bias() { return bias_; }

private:
    int in_, out_;
    ParamT<T> weight_, bias_;
    std::vector<TensorT<T>> cache_;
};

template <typename T>
class GlobalAvgPoolT {
public:
    TensorT<T> forward(const TensorT<T>& x, bool cache) {
        const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        TensorT<T> y({n, c});
        const std::int64_t plane = static_cast<std::int64_t>(h) * w;
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T* p = x.data() + (static_cast<std::int64_t>(i) * c + ch) * plane;
                double s = 0;
                for (std::int64_t j = 0; j < plane; ++j) s += p[j];
                y.at(i, ch) = static_cast<T>(s / static_cast<double>(plane));
            }
        if (cache) cache_.push_back({h, w});
        return y;
    }

    TensorT<T> backward(const TensorT<T>& gy) {
        if (cache_.empty()) throw Error("GlobalAvgPool::backward without cached forward");
        auto [h, w] = cache_.back();
        cache_.pop_back();
        const int n = gy.dim(0), c = gy.dim(1);
        TensorT<T> gx({n, c, h, w});
        const T scale = T{1} / static_cast<T>(h * w);
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch) {
                const T g = gy.at(i, ch) * scale;
                T* p = gx.data() + (static_cast<std::int64_t>(i) * c + ch) * h * w;
                std::fill(p, p + static_cast<std::int64_t>(h) * w, g);
            }
        return gx;
    }

private:
    std::vector<std::pair<int, int>> cache_;
};

// ---------------------------------------------------------------------------
// Channel concat / split (decoder skip connections, discriminator inputs)
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw ShapeError("concat_channels: incompatible shapes");
    const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1), h = a.dim(2), w = a.dim(3);
    TensorT<T> y({n, ca + cb, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy(a.data() + static_cast<std::int64_t>(i) * ca * plane,
                  a.data() + static_cast<std::int64_t>(i + 1) * ca * plane,
                  y.data() + static_cast<std::int64_t>(i) * (ca + cb) * plane);
        std::copy(b.data() + static_cast<std::int64_t>(i) * cb * plane,
                  b.data() + static_cast<std::int64_t>(i + 1) * cb * plane,
                  y.data() + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane);
    }
    return y;
}

template <typename T>
std::pair<TensorT<T>, TensorT<T>> split_channels(const TensorT<T>& y, int ca) {
    const int n = y.dim(0), c = y.dim(1), h = y.dim(2), w = y.dim(3);
    const int cb = c - ca;
    TensorT<T> a({n, ca, h, w}), b({n, cb, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        std::copy(y.data() + static_cast<std::int64_t>(i) * c * plane,
                  y.data() + (static_cast<std::int64_t>(i) * c + ca) * plane,
                  a.data() + static_cast<std::int64_t>(i) * ca * plane);
        std::copy(y.data() + (static_cast<std::int64_t>(i) * c + ca) * plane,
                  y.data() + static_cast<std::int64_t>(i + 1) * c * plane,
                  b.data() + static_cast<std::int64_t>(i) * cb * plane);
    }
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Softmax helpers (channel axis of (N,C,H,W))
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& logits) {
    const int n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
    TensorT<T> p(logits.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        const T* ls = logits.data() + static_cast<std::int64_t>(i) * c * plane;
        T* ps = p.data() + static_cast<std::int64_t>(i) * c * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            T mx = ls[j];
            for (int ch = 1; ch < c; ++ch) mx = std::max(mx, ls[ch * plane + j]);
            T sum = T{0};
            for (int ch = 0; ch < c; ++ch) {
                const T e = std::exp(ls[ch * plane + j] - mx);
                ps[ch * plane + j] = e;
                sum += e;
            }
            for (int ch = 0; ch < c; ++ch) ps[ch * plane + j] /= sum;
        }
    }
    return p;
}

/// d(loss)/d(logits) given d(loss)/d(probs) where probs = softmax(logits):
/// g_c = p_c * (gp_c - sum_k p_k gp_k).
template <typename T>
TensorT<T> softmax_backward(const TensorT<T>& probs, const TensorT<T>& gprobs) {
    const int n = probs.dim(0), c = probs.dim(1), h = probs.dim(2), w = probs.dim(3);
    TensorT<T> g(probs.shape());
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        const T* ps = probs.data() + static_cast<std::int64_t>(i) * c * plane;
        const T* gp = gprobs.data() + static_cast<std::int64_t>(i) * c * plane;
        T* gs = g.data() + static_cast<std::int64_t>(i) * c * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            T dot = T{0};
            for (int ch = 0; ch < c; ++ch) dot += ps[ch * plane + j] * gp[ch * plane + j];
            for (int ch = 0; ch < c; ++ch)
                gs[ch * plane + j] = ps[ch * plane + j] * (gp[ch * plane + j] - dot);
        }
    }
    return g;
}

template <typename T>
TensorT<T> one_hot_channels(const IntTensor& labels, int num_classes) {
    const int n = labels.dim(0), h = labels.dim(1), w = labels.dim(2);
    TensorT<T> y({n, num_classes, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        const std::int32_t* ls = labels.data() + static_cast<std::int64_t>(i) * plane;
        T* ys = y.data() + static_cast<std::int64_t>(i) * num_classes * plane;
        for (std::int64_t j = 0; j < plane; ++j) ys[ls[j] * plane + j] = T{1};
    }
    return y;
}

/// Per-pixel argmax over channels of (N,C,H,W) -> (N,H,W).
template <typename T>
IntTensor argmax_channels(const TensorT<T>& x) {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    IntTensor y({n, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int i = 0; i < n; ++i) {
        const T* xs = x.data() + static_cast<std::int64_t>(i) * c * plane;
        std::int32_t* ys = y.data() + static_cast<std::int64_t>(i) * plane;
        for (std::int64_t j = 0; j < plane; ++j) {
            int best = 0;
            T bv = xs[j];
            for (int ch = 1; ch < c; ++ch)
                if (xs[ch * plane + j] > bv) {
                    bv = xs[ch * plane + j];
                    best = ch;
                }
            ys[j] = best;
        }
    }
    return y;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

template <typename T>
class AdamT {
public:
    explicit AdamT(ParamGroup<T> group, T lr, T beta1 = static_cast<T>(0.9),
                   T beta2 = static_cast<T>(0.999), T eps = static_cast<T>(1e-8))
        : group_(std::move(group)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        for (auto* p : group_.params) {
            m_.push_back(TensorT<T>::zeros(p->value.shape()));
            v_.push_back(TensorT<T>::zeros(p->value.shape()));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), t_);
        const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), t_);
        for (size_t k = 0; k < group_.params.size(); ++k) {
            ParamT<T>& p = *group_.params[k];
            for (std::int64_t i = 0; i < p.value.numel(); ++i) {
                const T g = p.grad[i];
                m_[k][i] = beta1_ * m_[k][i] + (T{1} - beta1_) * g;
                v_[k][i] = beta2_ * v_[k][i] + (T{1} - beta2_) * g * g;
                const T mhat = static_cast<T>(m_[k][i] / bc1);
                const T vhat = static_cast<T>(v_[k][i] / bc2);
                p.value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }

    void zero_grad() { group_.zero_grad(); }
    ParamGroup<T>& group() { return group_; }
    void set_lr(T lr) { lr_ = lr; }

private:
    ParamGroup<T> group_;
    T lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<TensorT<T>> m_, v_;
};

using Conv2d = Conv2dT<float>;
using BatchNorm2d = BatchNorm2dT<float>;
using ReLU = ReLUT<float>;
using LeakyReLU = LeakyReLUT<float>;
using MaxPool2d = MaxPool2dT<float>;
using MaxUnpool2d = MaxUnpool2dT<float>;
using Linear = LinearT<float>;
using GlobalAvgPool = GlobalAvgPoolT<float>;
using Adam = AdamT<float>;
using Param = ParamT<float>;

}  // namespace strokeseg::nn
