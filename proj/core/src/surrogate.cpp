#include "torsion/surrogate.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <thread>

#include "torsion/io_util.hpp"

namespace torsion {

namespace {

template <class T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using VecX = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
void im2col(const Tensor<T>& x, int k, MatX<T>& cols) {
    const int pad = (k - 1) / 2, H = x.h, W = x.w, C = x.c;
    const size_t hw = size_t(H) * W;
    cols.resize(C * k * k, long(hw));
    cols.setZero();
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < k; ++dy)
            for (int dx = 0; dx < k; ++dx) {
                const int row = (c * k + dy) * k + dx;
                T* dst_row = cols.data() + size_t(row) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= H) continue;
                    const int x0 = std::max(0, pad - dx);
                    const int x1 = std::min(W, W + pad - dx);
                    const T* src = &x.v[(size_t(c) * H + sy) * W];
                    T* dst = dst_row + size_t(y) * W;
                    for (int xc = x0; xc < x1; ++xc) dst[xc] = src[xc + dx - pad];
                }
            }
}

template <class T>
void col2im(const MatX<T>& cols, int k, Tensor<T>& dx) {
    const int pad = (k - 1) / 2, H = dx.h, W = dx.w, C = dx.c;
    const size_t hw = size_t(H) * W;
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < k; ++dy)
            for (int dx_ = 0; dx_ < k; ++dx_) {
                const int row = (c * k + dy) * k + dx_;
                const T* src_row = cols.data() + size_t(row) * hw;
                for (int y = 0; y < H; ++y) {
                    const int sy = y + dy - pad;
                    if (sy < 0 || sy >= H) continue;
                    const int x0 = std::max(0, pad - dx_);
                    const int x1 = std::min(W, W + pad - dx_);
                    T* dst = &dx.v[(size_t(c) * H + sy) * W];
                    const T* src = src_row + size_t(y) * W;
                    for (int xc = x0; xc < x1; ++xc) dst[xc + dx_ - pad] += src[xc];
                }
            }
}

} // namespace

template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2d<T>& layer) {
    if (x.c != layer.in_ch)
        throw SurrogateError("conv2d: input has " + std::to_string(x.c) + " channels, layer expects " +
                             std::to_string(layer.in_ch));
    if (layer.k % 2 == 0) throw SurrogateError("conv2d kernel side must be odd");
    Tensor<T> out(layer.out_ch, x.h, x.w);
    MatX<T> cols;
    im2col(x, layer.k, cols);
    Eigen::Map<const MatX<T>> K(layer.kernel.data(), layer.out_ch, layer.in_ch * layer.k * layer.k);
    Eigen::Map<MatX<T>> O(out.v.data(), layer.out_ch, long(size_t(x.h) * x.w));
    O.noalias() = K * cols;
    for (int o = 0; o < layer.out_ch; ++o) O.row(o).array() += layer.bias[size_t(o)];
    return out;
}

namespace {

template <class T>
Tensor<T> conv2d_backward(const Conv2d<T>& layer, const Tensor<T>& input, const Tensor<T>& dy,
                          T* gkernel, T* gbias) {
    const long hw = long(size_t(input.h) * input.w);
    MatX<T> cols;
    im2col(input, layer.k, cols);
    Eigen::Map<const MatX<T>> dY(dy.v.data(), layer.out_ch, hw);
    Eigen::Map<MatX<T>> gK(gkernel, layer.out_ch, layer.in_ch * layer.k * layer.k);
    gK.noalias() += dY * cols.transpose();
    for (int o = 0; o < layer.out_ch; ++o) gbias[o] += dY.row(o).sum();
    Eigen::Map<const MatX<T>> K(layer.kernel.data(), layer.out_ch,
                                layer.in_ch * layer.k * layer.k);
    MatX<T> dcols(layer.in_ch * layer.k * layer.k, hw);
    dcols.noalias() = K.transpose() * dY;
    Tensor<T> dx(input.c, input.h, input.w);
    col2im(dcols, layer.k, dx);
    return dx;
}

template <class T>
Tensor<T> maxpool_forward(const Tensor<T>& x, std::vector<int>* argmax) {
    if (x.h % 2 != 0 || x.w % 2 != 0)
        throw SurrogateError("maxpool requires even spatial dimensions, got " +
                             std::to_string(x.h) + "x" + std::to_string(x.w));
    Tensor<T> out(x.c, x.h / 2, x.w / 2);
    if (argmax) argmax->assign(out.count(), 0);
    size_t oi = 0;
    for (int c = 0; c < x.c; ++c)
        for (int y = 0; y < out.h; ++y)
            for (int xc = 0; xc < out.w; ++xc, ++oi) {
                T best{};
                int best_idx = -1;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int idx = int((size_t(c) * x.h + 2 * y + dy) * x.w + 2 * xc + dx);
                        T val = x.v[size_t(idx)];
                        if (best_idx < 0 || val > best) {
                            best = val;
                            best_idx = idx;
                        }
                    }
                out.v[oi] = best;
                if (argmax) (*argmax)[oi] = best_idx;
            }
    return out;
}

template <class T>
Tensor<T> fc_forward(const Tensor<T>& x, const FullyConnected<T>& layer) {
    if (long(x.count()) != layer.in_n)
        throw SurrogateError("fully-connected: input size " + std::to_string(x.count()) +
                             " does not match layer (" + std::to_string(layer.in_n) + ")");
    Tensor<T> out(layer.out_n, 1, 1);
    Eigen::Map<const MatX<T>> W(layer.weight.data(), layer.out_n, layer.in_n);
    Eigen::Map<const VecX<T>> xv(x.v.data(), layer.in_n);
    Eigen::Map<VecX<T>> yv(out.v.data(), layer.out_n);
    yv.noalias() = W * xv;
    for (int o = 0; o < layer.out_n; ++o) out.v[size_t(o)] += layer.bias[size_t(o)];
    return out;
}

template <class T>
Tensor<T> fc_backward(const FullyConnected<T>& layer, const Tensor<T>& input, const Tensor<T>& dy,
                      T* gweight, T* gbias) {
    Eigen::Map<const VecX<T>> xv(input.v.data(), layer.in_n);
    Eigen::Map<const VecX<T>> dyv(dy.v.data(), layer.out_n);
    Eigen::Map<MatX<T>> gW(gweight, layer.out_n, layer.in_n);
    gW.noalias() += dyv * xv.transpose();
    for (int o = 0; o < layer.out_n; ++o) gbias[o] += dy.v[size_t(o)];
    Eigen::Map<const MatX<T>> W(layer.weight.data(), layer.out_n, layer.in_n);
    Tensor<T> dx(input.c, input.h, input.w);
    Eigen::Map<VecX<T>> dxv(dx.v.data(), layer.in_n);
    dxv.noalias() = W.transpose() * dyv;
    return dx;
}

template <class T>
size_t layer_param_count(const Layer<T>& layer) {
    if (const auto* c = std::get_if<Conv2d<T>>(&layer))
        return size_t(c->out_ch) * c->in_ch * c->k * c->k + size_t(c->out_ch);
    if (const auto* f = std::get_if<FullyConnected<T>>(&layer))
        return size_t(f->out_n) * f->in_n + size_t(f->out_n);
    return 0;
}

} // namespace

// --- CnnModel -----------------------------------------------------------------

template <class T>
CnnModel<T>::CnnModel(std::vector<Layer<T>> layers, int input_side)
    : layers_(std::move(layers)), input_side_(input_side) {
    offsets_.resize(layers_.size());
    size_t off = 0;
    for (size_t i = 0; i < layers_.size(); ++i) {
        offsets_[i] = off;
        off += layer_param_count(layers_[i]);
        if (auto* c = std::get_if<Conv2d<T>>(&layers_[i])) {
            c->kernel.assign(size_t(c->out_ch) * c->in_ch * c->k * c->k, T(0));
            c->bias.assign(size_t(c->out_ch), T(0));
        } else if (auto* f = std::get_if<FullyConnected<T>>(&layers_[i])) {
            f->weight.assign(size_t(f->out_n) * f->in_n, T(0));
            f->bias.assign(size_t(f->out_n), T(0));
        }
    }
    param_count_ = off;
}

template <class T>
int CnnModel<T>::conv_layer_count() const {
    int n = 0;
    for (const auto& l : layers_) n += std::holds_alternative<Conv2d<T>>(l);
    return n;
}

template <class T>
void CnnModel<T>::init_he(uint64_t seed) {
    Rng rng(seed);
    for (auto& l : layers_) {
        if (auto* c = std::get_if<Conv2d<T>>(&l)) {
            double s = std::sqrt(2.0 / (double(c->in_ch) * c->k * c->k));
            for (auto& w : c->kernel) w = T(rng.normal() * s);
            std::fill(c->bias.begin(), c->bias.end(), T(0));
        } else if (auto* f = std::get_if<FullyConnected<T>>(&l)) {
            double s = std::sqrt(2.0 / double(f->in_n));
            for (auto& w : f->weight) w = T(rng.normal() * s);
            std::fill(f->bias.begin(), f->bias.end(), T(0));
        }
    }
}

template <class T>
void CnnModel<T>::set_dropout_rate(double p) {
    if (p < 0 || p >= 1) throw SurrogateError("dropout rate must lie in [0,1)");
    for (auto& l : layers_)
        if (auto* d = std::get_if<Dropout>(&l)) d->p = p;
}

template <class T>
std::vector<T> CnnModel<T>::get_params() const {
    std::vector<T> out(param_count_);
    for (size_t i = 0; i < layers_.size(); ++i) {
        T* dst = out.data() + offsets_[i];
        if (const auto* c = std::get_if<Conv2d<T>>(&layers_[i])) {
            std::copy(c->kernel.begin(), c->kernel.end(), dst);
            std::copy(c->bias.begin(), c->bias.end(), dst + c->kernel.size());
        } else if (const auto* f = std::get_if<FullyConnected<T>>(&layers_[i])) {
            std::copy(f->weight.begin(), f->weight.end(), dst);
            std::copy(f->bias.begin(), f->bias.end(), dst + f->weight.size());
        }
    }
    return out;
}

template <class T>
void CnnModel<T>::set_params(const std::vector<T>& p) {
    if (p.size() != param_count_) throw SurrogateError("parameter vector size mismatch");
    for (size_t i = 0; i < layers_.size(); ++i) {
        const T* src = p.data() + offsets_[i];
        if (auto* c = std::get_if<Conv2d<T>>(&layers_[i])) {
            std::copy(src, src + c->kernel.size(), c->kernel.begin());
            std::copy(src + c->kernel.size(), src + c->kernel.size() + c->bias.size(),
                      c->bias.begin());
        } else if (auto* f = std::get_if<FullyConnected<T>>(&layers_[i])) {
            std::copy(src, src + f->weight.size(), f->weight.begin());
            std::copy(src + f->weight.size(), src + f->weight.size() + f->bias.size(),
                      f->bias.begin());
        }
    }
}

template <class T>
T CnnModel<T>::weight_sq_sum() const {
    double s = 0;
    for (const auto& l : layers_) {
        if (const auto* c = std::get_if<Conv2d<T>>(&l))
            for (T w : c->kernel) s += double(w) * double(w);
        if (const auto* f = std::get_if<FullyConnected<T>>(&l))
            for (T w : f->weight) s += double(w) * double(w);
    }
    return T(s);
}

template <class T>
void CnnModel<T>::add_weight_decay_grad(T two_lambda, std::vector<T>& grads) const {
    if (grads.size() != param_count_) throw SurrogateError("gradient vector size mismatch");
    for (size_t i = 0; i < layers_.size(); ++i) {
        T* g = grads.data() + offsets_[i];
        if (const auto* c = std::get_if<Conv2d<T>>(&layers_[i])) {
            for (size_t k = 0; k < c->kernel.size(); ++k) g[k] += two_lambda * c->kernel[k];
        } else if (const auto* f = std::get_if<FullyConnected<T>>(&layers_[i])) {
            for (size_t k = 0; k < f->weight.size(); ++k) g[k] += two_lambda * f->weight[k];
        }
    }
}

template <class T>
Tensor<T> CnnModel<T>::forward_all(const Tensor<T>& x, Mode mode, Rng* rng,
                                   ForwardTrace<T>* trace) const {
    if (x.h != input_side_ || x.w != input_side_)
        throw SurrogateError("input is " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                             ", model expects " + std::to_string(input_side_));
    if (trace) {
        trace->layers.clear();
        trace->layers.resize(layers_.size());
    }
    Tensor<T> cur = x;
    for (size_t i = 0; i < layers_.size(); ++i) {
        LayerTrace<T>* lt = trace ? &trace->layers[i] : nullptr;
        const auto& l = layers_[i];
        if (const auto* c = std::get_if<Conv2d<T>>(&l)) {
            if (lt) lt->input = cur;
            cur = conv2d_forward(cur, *c);
        } else if (std::holds_alternative<ReLU>(l)) {
            if (lt) lt->input = cur;
            for (auto& v : cur.v) v = v > T(0) ? v : T(0);
        } else if (std::holds_alternative<MaxPool2d>(l)) {
            Tensor<T> in = cur;
            cur = maxpool_forward(cur, lt ? &lt->argmax : nullptr);
            if (lt) lt->input = std::move(in);
        } else if (std::holds_alternative<Flatten>(l)) {
            if (lt) lt->input = cur;
            Tensor<T> flat(int(cur.count()), 1, 1);
            flat.v = std::move(cur.v);
            cur = std::move(flat);
        } else if (const auto* f = std::get_if<FullyConnected<T>>(&l)) {
            if (lt) lt->input = cur;
            cur = fc_forward(cur, *f);
        } else if (const auto* d = std::get_if<Dropout>(&l)) {
            if (lt) lt->input = cur;
            if (mode == Mode::Train && d->p > 0) {
                if (!rng) throw SurrogateError("training-mode dropout needs a generator");
                T scale = T(1.0 / (1.0 - d->p));
                std::vector<T> mask(cur.count());
                for (size_t k = 0; k < mask.size(); ++k) {
                    mask[k] = rng->bernoulli(d->p) ? T(0) : scale;
                    cur.v[k] *= mask[k];
                }
                if (lt) lt->mask = std::move(mask);
            }
        }
    }
    if (trace) trace->output = cur;
    return cur;
}

template <class T>
T CnnModel<T>::forward(const Tensor<T>& x) const {
    Tensor<T> out = forward_all(x, Mode::Infer, nullptr, nullptr);
    if (out.count() != 1) throw SurrogateError("model output is not a scalar");
    return out.v[0];
}

template <class T>
T CnnModel<T>::forward(const GrayImage& img) const {
    return forward(tensor_from_gray<T>(img));
}

template <class T>
void CnnModel<T>::backward(const ForwardTrace<T>& trace, T dl_dout,
                           std::vector<T>& grads) const {
    if (trace.layers.size() != layers_.size())
        throw SurrogateError("backward called without a matching forward trace");
    if (grads.size() != param_count_) grads.resize(param_count_, T(0));
    if (trace.output.count() != 1) throw SurrogateError("model output is not a scalar");
    Tensor<T> dy(1, 1, 1);
    dy.v[0] = dl_dout;
    for (size_t ri = layers_.size(); ri-- > 0;) {
        const auto& l = layers_[ri];
        const LayerTrace<T>& lt = trace.layers[ri];
        if (const auto* c = std::get_if<Conv2d<T>>(&l)) {
            T* g = grads.data() + offsets_[ri];
            dy = conv2d_backward(*c, lt.input, dy, g, g + c->kernel.size());
        } else if (std::holds_alternative<ReLU>(l)) {
            for (size_t k = 0; k < dy.v.size(); ++k)
                if (lt.input.v[k] <= T(0)) dy.v[k] = T(0);
        } else if (std::holds_alternative<MaxPool2d>(l)) {
            Tensor<T> dx(lt.input.c, lt.input.h, lt.input.w);
            for (size_t k = 0; k < lt.argmax.size(); ++k)
                dx.v[size_t(lt.argmax[k])] += dy.v[k];
            dy = std::move(dx);
        } else if (std::holds_alternative<Flatten>(l)) {
            Tensor<T> dx(lt.input.c, lt.input.h, lt.input.w);
            dx.v = std::move(dy.v);
            dy = std::move(dx);
        } else if (const auto* f = std::get_if<FullyConnected<T>>(&l)) {
            T* g = grads.data() + offsets_[ri];
            dy = fc_backward(*f, lt.input, dy, g, g + f->weight.size());
        } else if (std::holds_alternative<Dropout>(l)) {
            if (!lt.mask.empty())
                for (size_t k = 0; k < dy.v.size(); ++k) dy.v[k] *= lt.mask[k];
        }
    }
}

template <class T>
std::string CnnModel<T>::descriptor() const {
    std::ostringstream os;
    os << "input 1 " << input_side_ << ' ' << input_side_ << '\n';
    for (const auto& l : layers_) {
        if (const auto* c = std::get_if<Conv2d<T>>(&l))
            os << "conv2d " << c->out_ch << ' ' << c->in_ch << ' ' << c->k << '\n';
        else if (std::holds_alternative<ReLU>(l))
            os << "relu\n";
        else if (std::holds_alternative<MaxPool2d>(l))
            os << "maxpool2d\n";
        else if (std::holds_alternative<Flatten>(l))
            os << "flatten\n";
        else if (const auto* f = std::get_if<FullyConnected<T>>(&l))
            os << "fc " << f->out_n << ' ' << f->in_n << '\n';
        else if (const auto* d = std::get_if<Dropout>(&l))
            os << "dropout " << fmt_full(d->p) << '\n';
    }
    os << "end\n";
    return os.str();
}

// --- architectures ---------------------------------------------------------------

template <class T>
CnnModel<T> build_architecture_t(const std::string& name, int input_side) {
    std::vector<Layer<T>> layers;
    auto conv = [&](int out, int in) { layers.push_back(Conv2d<T>{out, in, 3, {}, {}}); };
    auto relu = [&] { layers.push_back(ReLU{}); };
    auto pool = [&] { layers.push_back(MaxPool2d{}); };
    if (name == "desk") {
        if (input_side < 8 || input_side % 8 != 0)
            throw SurrogateError("desk architecture needs the input side divisible by 8");
        int side = input_side / 8;
        conv(8, 1), relu(), conv(8, 8), relu(), pool();
        conv(16, 8), relu(), conv(16, 16), relu(), pool();
        conv(32, 16), relu(), conv(32, 32), relu(), pool();
        layers.push_back(Flatten{});
        layers.push_back(FullyConnected<T>{128, 32 * side * side, {}, {}});
        relu();
        layers.push_back(Dropout{0.5});
        layers.push_back(FullyConnected<T>{1, 128, {}, {}});
        return CnnModel<T>(std::move(layers), input_side);
    }
    if (name == "vgg16") {
        if (input_side < 32 || input_side % 32 != 0)
            throw SurrogateError("vgg16 needs the input side divisible by 32");
        const int stacks[5][3] = {{64, 64, 0}, {128, 128, 0}, {256, 256, 256},
                                  {512, 512, 512}, {512, 512, 512}};
        int in = 1;
        for (const auto& stack : stacks) {
            for (int ch : stack) {
                if (ch == 0) continue;
                conv(ch, in), relu();
                in = ch;
            }
            pool();
        }
        int side = input_side / 32;
        layers.push_back(Flatten{});
        layers.push_back(FullyConnected<T>{4096, 512 * side * side, {}, {}});
        relu();
        layers.push_back(Dropout{0.5});
        layers.push_back(FullyConnected<T>{4096, 4096, {}, {}});
        relu();
        layers.push_back(Dropout{0.5});
        layers.push_back(FullyConnected<T>{1000, 4096, {}, {}});
        relu();
        layers.push_back(FullyConnected<T>{1, 1000, {}, {}});
        return CnnModel<T>(std::move(layers), input_side);
    }
    throw SurrogateError("unknown architecture '" + name + "' (expected desk or vgg16)");
}

CnnModel<float> build_architecture(const std::string& name, int input_side) {
    return build_architecture_t<float>(name, input_side);
}

// --- training -----------------------------------------------------------------

namespace {

void parallel_over(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
        });
    for (auto& t : pool) t.join();
}

double mse_of(const std::vector<float>& preds, const std::vector<float>& targets) {
    double s = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        double d = double(preds[i]) - double(targets[i]);
        s += d * d;
    }
    return s / double(preds.size());
}

} // namespace

std::vector<float> predict_batch(const CnnModel<float>& model,
                                 const std::vector<Tensor<float>>& xs, int workers) {
    std::vector<float> out(xs.size());
    parallel_over(int(xs.size()), workers,
                  [&](int i) { out[size_t(i)] = model.forward(xs[size_t(i)]); });
    return out;
}

double loss_value(const std::vector<double>& preds, const std::vector<double>& targets,
                  double weight_sq_sum, double lambda) {
    if (preds.empty()) throw SurrogateError("loss of an empty batch");
    if (preds.size() != targets.size())
        throw SurrogateError("loss: prediction/target size mismatch");
    double s = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
        double d = preds[i] - targets[i];
        s += d * d;
    }
    return s / double(preds.size()) + lambda * weight_sq_sum;
}

TrainResult train(CnnModel<float>& model, const std::vector<Tensor<float>>& train_x,
                  const std::vector<float>& train_y, const std::vector<Tensor<float>>& val_x,
                  const std::vector<float>& val_y, const TrainConfig& cfg,
                  AdamState* adam_out) {
    if (train_x.empty() || val_x.empty())
        throw SurrogateError("training needs nonempty train and validation splits");
    if (train_x.size() != train_y.size() || val_x.size() != val_y.size())
        throw SurrogateError("sample/target count mismatch");
    if (cfg.batch < 1 || cfg.epochs < 0 || cfg.lr <= 0)
        throw SurrogateError("invalid training configuration");
    if (cfg.optimizer != "adam" && cfg.optimizer != "sgd")
        throw SurrogateError("optimizer must be adam or sgd");

    model.set_dropout_rate(cfg.dropout);
    const size_t P = model.param_count();
    std::vector<float> params = model.get_params();
    AdamState adam;
    adam.m.assign(P, 0.f);
    adam.v.assign(P, 0.f);
    std::vector<float> sgd_vel;
    if (cfg.optimizer == "sgd") sgd_vel.assign(P, 0.f);

    const int n = int(train_x.size());
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    std::vector<std::vector<float>> sample_grads(static_cast<size_t>(cfg.batch));
    std::vector<float> grads(P), preds_batch(static_cast<size_t>(cfg.batch));

    TrainResult result;
    std::vector<float> best_params = params;
    double best_val = 1e300;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng shuffle_rng(substream_seed(cfg.seed ^ 0x5E0Full, uint64_t(epoch)));
        for (int i = n - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[size_t(shuffle_rng.uniform_int(0, i))]);

        double epoch_loss_sum = 0;
        int batches = 0;
        for (int start = 0; start < n; start += cfg.batch) {
            const int bs = std::min(cfg.batch, n - start);
            const double wss = double(model.weight_sq_sum());
            // per-sample gradients land in their own buffers and are reduced
            // in index order, so the result is the same for any worker count
            parallel_over(bs, cfg.workers, [&](int bi) {
                auto& buf = sample_grads[size_t(bi)];
                buf.assign(P, 0.f);
                const int si = order[size_t(start + bi)];
                Rng drop_rng(substream_seed(cfg.seed ^ 0xD809ull,
                                            (uint64_t(epoch) << 32) | uint64_t(start + bi)));
                ForwardTrace<float> trace;
                Tensor<float> out =
                    model.forward_all(train_x[size_t(si)], Mode::Train, &drop_rng, &trace);
                float pred = out.v[0];
                preds_batch[size_t(bi)] = pred;
                float dl = 2.f * (pred - train_y[size_t(si)]) / float(bs);
                model.backward(trace, dl, buf);
            });
            std::fill(grads.begin(), grads.end(), 0.f);
            for (int bi = 0; bi < bs; ++bi) {
                const auto& buf = sample_grads[size_t(bi)];
                for (size_t k = 0; k < P; ++k) grads[k] += buf[k];
            }
            model.add_weight_decay_grad(float(2.0 * cfg.lambda), grads);

            double batch_mse = 0;
            for (int bi = 0; bi < bs; ++bi) {
                double d = double(preds_batch[size_t(bi)]) -
                           double(train_y[size_t(order[size_t(start + bi)])]);
                batch_mse += d * d;
            }
            batch_mse /= bs;
            double batch_loss = batch_mse + cfg.lambda * wss;
            if (!std::isfinite(batch_loss))
                throw SurrogateError("training diverged (non-finite loss)");
            epoch_loss_sum += batch_loss;
            ++batches;

            if (cfg.optimizer == "adam") {
                ++adam.step;
                const float b1 = 0.9f, b2 = 0.999f, eps = 1e-8f;
                const float c1 = 1.f - std::pow(b1, float(adam.step));
                const float c2 = 1.f - std::pow(b2, float(adam.step));
                const float lr = float(cfg.lr);
                for (size_t k = 0; k < P; ++k) {
                    float g = grads[k];
                    adam.m[k] = b1 * adam.m[k] + (1.f - b1) * g;
                    adam.v[k] = b2 * adam.v[k] + (1.f - b2) * g * g;
                    params[k] -= lr * (adam.m[k] / c1) / (std::sqrt(adam.v[k] / c2) + eps);
                }
            } else {
                const float lr = float(cfg.lr), mom = float(cfg.momentum);
                for (size_t k = 0; k < P; ++k) {
                    sgd_vel[k] = mom * sgd_vel[k] - lr * grads[k];
                    params[k] += sgd_vel[k];
                }
            }
            model.set_params(params);
        }

        std::vector<float> val_preds = predict_batch(model, val_x, cfg.workers);
        double val_mse = mse_of(val_preds, val_y);
        double val_loss = val_mse + cfg.lambda * double(model.weight_sq_sum());
        EpochStats stats{epoch, batches ? epoch_loss_sum / batches : 0.0, val_loss, val_mse};
        result.history.push_back(stats);
        if (!std::isfinite(val_loss)) throw SurrogateError("training diverged on validation");

        if (val_loss < best_val) {
            best_val = val_loss;
            best_params = params;
            result.best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best > cfg.patience) break;
        }
    }
    model.set_params(best_params);
    result.best_val_loss = best_val;
    if (adam_out) *adam_out = std::move(adam);
    return result;
}

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history) {
    os << "epoch,train_loss,val_loss,val_mse\n";
    for (const auto& e : history)
        os << e.epoch << ',' << fmt_full(e.train_loss) << ',' << fmt_full(e.val_loss) << ','
           << fmt_full(e.val_mse) << '\n';
}

// --- checkpoints ------------------------------------------------------------------

void save_checkpoint(const CnnModel<float>& model, const std::string& path,
                     const AdamState* adam) {
    std::ostringstream buf(std::ios::binary);
    buf << "TORNET1\n";
    buf << model.descriptor();
    std::vector<float> params = model.get_params();
    write_u64(buf, params.size());
    buf.write(reinterpret_cast<const char*>(params.data()), std::streamsize(params.size() * 4));
    buf.put(adam ? char(1) : char(0));
    if (adam) {
        write_u64(buf, adam->step);
        buf.write(reinterpret_cast<const char*>(adam->m.data()),
                  std::streamsize(adam->m.size() * 4));
        buf.write(reinterpret_cast<const char*>(adam->v.data()),
                  std::streamsize(adam->v.size() * 4));
    }
    std::string body = buf.str();
    uint32_t crc = Crc32::of(body.data(), body.size());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open " + path + " for writing");
    os.write(body.data(), std::streamsize(body.size()));
    write_u32(os, crc);
    if (!os) throw IoError("write failed: " + path);
}

CnnModel<float> load_checkpoint(const std::string& path, AdamState* adam) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::string body((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (body.size() < 12) throw IoError(path + ": truncated checkpoint");
    uint32_t stored;
    std::memcpy(&stored, body.data() + body.size() - 4, 4);
    body.resize(body.size() - 4);
    if (Crc32::of(body.data(), body.size()) != stored)
        throw IoError(path + ": checkpoint checksum mismatch");

    std::istringstream in(body, std::ios::binary);
    std::string line;
    if (!std::getline(in, line) || line != "TORNET1") throw IoError(path + ": not a checkpoint");
    int side = 0;
    std::vector<Layer<float>> layers;
    while (std::getline(in, line)) {
        std::istringstream ls(line);
        std::string kind;
        ls >> kind;
        if (kind == "end") break;
        if (kind == "input") {
            int c;
            ls >> c >> side >> side;
        } else if (kind == "conv2d") {
            int out, inc, k;
            ls >> out >> inc >> k;
            layers.push_back(Conv2d<float>{out, inc, k, {}, {}});
        } else if (kind == "relu") {
            layers.push_back(ReLU{});
        } else if (kind == "maxpool2d") {
            layers.push_back(MaxPool2d{});
        } else if (kind == "flatten") {
            layers.push_back(Flatten{});
        } else if (kind == "fc") {
            int out, inn;
            ls >> out >> inn;
            layers.push_back(FullyConnected<float>{out, inn, {}, {}});
        } else if (kind == "dropout") {
            double p;
            ls >> p;
            layers.push_back(Dropout{p});
        } else {
            throw IoError(path + ": unknown layer '" + kind + "'");
        }
    }
    CnnModel<float> model(std::move(layers), side);
    uint64_t count = read_u64(in);
    if (count != model.param_count()) throw IoError(path + ": parameter count mismatch");
    std::vector<float> params(count);
    if (!in.read(reinterpret_cast<char*>(params.data()), std::streamsize(count * 4)))
        throw IoError(path + ": truncated parameters");
    model.set_params(params);
    char has_adam = 0;
    in.get(has_adam);
    if (has_adam == 1) {
        AdamState st;
        st.step = read_u64(in);
        st.m.resize(count);
        st.v.resize(count);
        if (!in.read(reinterpret_cast<char*>(st.m.data()), std::streamsize(count * 4)) ||
            !in.read(reinterpret_cast<char*>(st.v.data()), std::streamsize(count * 4)))
            throw IoError(path + ": truncated optimizer state");
        if (adam) *adam = std::move(st);
    }
    return model;
}

// explicit instantiations: float for the pipeline, double for gradient checks
template struct Tensor<float>;
template struct Tensor<double>;
template Tensor<float> conv2d_forward<float>(const Tensor<float>&, const Conv2d<float>&);
template Tensor<double> conv2d_forward<double>(const Tensor<double>&, const Conv2d<double>&);
template class CnnModel<float>;
template class CnnModel<double>;
template CnnModel<float> build_architecture_t<float>(const std::string&, int);
template CnnModel<double> build_architecture_t<double>(const std::string&, int);

} // namespace torsion
