#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "torsion/raster.hpp"
#include "torsion/rng.hpp"

namespace torsion {

struct SurrogateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <class T>
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<T> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(size_t(c_) * h_ * w_, T(0)) {}

    T& at(int ci, int y, int x) { return v[(size_t(ci) * h + y) * w + x]; }
    T at(int ci, int y, int x) const { return v[(size_t(ci) * h + y) * w + x]; }
    size_t count() const { return v.size(); }
};

template <class T>
Tensor<T> tensor_from_gray(const GrayImage& img) {
    Tensor<T> t(1, img.n, img.n);
    for (size_t i = 0; i < img.v.size(); ++i) t.v[i] = T(img.v[i]);
    return t;
}

// --- layers -----------------------------------------------------------------

template <class T>
struct Conv2d {
    int out_ch = 0, in_ch = 0, k = 3; // odd kernel, stride 1, zero padding (k-1)/2
    std::vector<T> kernel;            // out*in*k*k
    std::vector<T> bias;              // out
};

template <class T>
struct FullyConnected {
    int out_n = 0, in_n = 0;
    std::vector<T> weight; // out*in
    std::vector<T> bias;
};

struct ReLU {};
struct MaxPool2d {}; // 2x2 window, stride 2
struct Flatten {};
struct Dropout {
    double p = 0.5;
};

template <class T>
using Layer = std::variant<Conv2d<T>, ReLU, MaxPool2d, Flatten, FullyConnected<T>, Dropout>;

// standalone convolution, also used by the model internally
template <class T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Conv2d<T>& layer);

// --- model -------------------------------------------------------------------

enum class Mode { Train, Infer };

template <class T>
struct LayerTrace {
    Tensor<T> input;
    std::vector<int> argmax; // maxpool: flat input index per output element
    std::vector<T> mask;     // dropout: scaled keep mask
};

template <class T>
struct ForwardTrace {
    std::vector<LayerTrace<T>> layers;
    Tensor<T> output;
};

template <class T>
class CnnModel {
  public:
    CnnModel() = default;
    CnnModel(std::vector<Layer<T>> layers, int input_side);

    int input_side() const { return input_side_; }
    size_t param_count() const { return param_count_; }
    int conv_layer_count() const;
    const std::vector<Layer<T>>& layers() const { return layers_; }

    void init_he(uint64_t seed);
    void set_dropout_rate(double p);

    std::vector<T> get_params() const;
    void set_params(const std::vector<T>& p);

    T weight_sq_sum() const; // kernels and FC weights only, biases excluded
    void add_weight_decay_grad(T two_lambda, std::vector<T>& grads) const;

    // trace != nullptr records what backward needs; rng required in Train mode
    // when the model contains dropout
    Tensor<T> forward_all(const Tensor<T>& x, Mode mode, Rng* rng,
                          ForwardTrace<T>* trace) const;
    T forward(const Tensor<T>& x) const;
    T forward(const GrayImage& img) const;

    // accumulates dL/dθ into grads (size param_count) given dL/d(output scalar)
    void backward(const ForwardTrace<T>& trace, T dl_dout, std::vector<T>& grads) const;

    std::string descriptor() const;

  private:
    std::vector<Layer<T>> layers_;
    int input_side_ = 0;
    size_t param_count_ = 0;
    std::vector<size_t> offsets_; // parameter offset per layer
};

// `desk` is the workstation-scale stack, `vgg16` the full 224-input stack
template <class T>
CnnModel<T> build_architecture_t(const std::string& name, int input_side);
CnnModel<float> build_architecture(const std::string& name, int input_side);

// --- training ------------------------------------------------------------------

struct TrainConfig {
    double lr = 1e-4;
    double lambda = 1e-6;
    double dropout = 0.5;
    int batch = 16;
    int epochs = 60;
    int patience = 20; // epochs without val improvement before stopping
    uint64_t seed = 1;
    int workers = 1;
    std::string optimizer = "adam"; // adam | sgd
    double momentum = 0.9;          // sgd only
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0; // mean over the epoch's minibatch losses
    double val_loss = 0;
    double val_mse = 0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_loss = 0;
};

struct AdamState {
    uint64_t step = 0;
    std::vector<float> m, v;
};

// minibatch training on the regularized MSE loss; keeps the best-validation
// parameters. Deterministic for a fixed seed regardless of worker count
// (per-sample gradients are reduced in index order).
TrainResult train(CnnModel<float>& model, const std::vector<Tensor<float>>& train_x,
                  const std::vector<float>& train_y, const std::vector<Tensor<float>>& val_x,
                  const std::vector<float>& val_y, const TrainConfig& cfg,
                  AdamState* adam_out = nullptr);

std::vector<float> predict_batch(const CnnModel<float>& model,
                                 const std::vector<Tensor<float>>& xs, int workers = 1);

// MSE + lambda * sum of squared weights
double loss_value(const std::vector<double>& preds, const std::vector<double>& targets,
                  double weight_sq_sum, double lambda);

void write_history_csv(std::ostream& os, const std::vector<EpochStats>& history);

// checkpoint: TORNET1, text descriptor, float32 params, optional Adam state, CRC
void save_checkpoint(const CnnModel<float>& model, const std::string& path,
                     const AdamState* adam = nullptr);
CnnModel<float> load_checkpoint(const std::string& path, AdamState* adam = nullptr);

} // namespace torsion
