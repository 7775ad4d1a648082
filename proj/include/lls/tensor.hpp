#pragma once

// Dense row-major tensors with reverse-mode autodiff on an explicit tape.
// Tensors are value handles onto shared storage; a Tape records coarse ops
// (one node per conv / loss term, not per scalar) and replays their backward
// rules in reverse. One tape per worker; gradients accumulate into shared
// grad slots until cleared.

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "lls/errors.hpp"

namespace lls {

class Tape;

struct Tensor {
    std::vector<int> shape;
    std::shared_ptr<std::vector<double>> data;
    std::shared_ptr<std::vector<double>> grad;  // allocated on first backward touch
    Tape* tape = nullptr;
    int node = -1;  // index on the producing tape, -1 for leaves

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> values);

    std::size_t size() const { return data ? data->size() : 0; }
    double* ptr() { return data->data(); }
    const double* ptr() const { return data->data(); }
    double* grad_ptr();  // allocates zeros on demand

    double scalar() const;  // value of a 1-element tensor
    bool defined() const { return static_cast<bool>(data); }
    bool all_finite() const;
    void clear_grad();
};

Tensor zeros(std::vector<int> shape);
Tensor full(std::vector<int> shape, double value);
Tensor uniform(std::vector<int> shape, double lo, double hi, std::mt19937_64& rng);

std::size_t shape_product(const std::vector<int>& shape);

class Tape {
public:
    // Records a node whose backward closure routes output grads to inputs.
    // out_grads lists the node's output grad slots; they are re-zeroed at the
    // start of every backward pass so only leaf grads accumulate across
    // passes. Returns the node id the output tensor should carry.
    int record(std::function<void()> backward,
               std::vector<std::shared_ptr<std::vector<double>>> out_grads);

    // Seeds d(loss)/d(loss)=1 and runs every recorded node once, newest
    // first. loss must be a scalar produced on this tape.
    void backward(Tensor& loss);

    void clear() { nodes_.clear(); }
    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::function<void()> backward;
        std::vector<std::shared_ptr<std::vector<double>>> out_grads;
    };
    std::vector<Node> nodes_;
};

enum class ElementwiseKind { add, sub, mul, relu, scale };

// ---- differentiable ops (tape may be null for plain evaluation) ----

Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double alpha);
Tensor relu(Tape* tape, const Tensor& a);
// add/sub/mul with a scalar second operand broadcast; other broadcasting is
// rejected with ShapeMismatch.
Tensor elementwise(Tape* tape, ElementwiseKind kind, const Tensor& a, const Tensor& b);
Tensor elementwise(Tape* tape, ElementwiseKind kind, const Tensor& a, double b);

// input c_in×h×w, kernel c_out×c_in×k×k -> c_out×h'×w'
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& kernel, int stride, int pad);
// input d×h×w, weights d×c -> c×h×w (per-location linear map, no bias)
Tensor conv1x1(Tape* tape, const Tensor& input, const Tensor& weights);
// d×h×w -> d
Tensor global_avg_pool(Tape* tape, const Tensor& input);
// c×h×w -> c×(h/2)×(w/2), 2x2 mean
Tensor avg_pool2x2(Tape* tape, const Tensor& input);

// softmax over the last axis, max-subtracted; NonFinite on bad input
Tensor softmax(Tape* tape, const Tensor& logits);
// softmax over the channel axis of a c×h×w tensor, per location
Tensor channel_softmax(Tape* tape, const Tensor& logits);

Tensor sum(Tape* tape, const Tensor& a);    // -> scalar
Tensor sumsq(Tape* tape, const Tensor& a);  // -> scalar
// x / ||x||_F; ZeroMap below 1e-12
Tensor frobenius_normalize(Tape* tape, const Tensor& x);
// d×h×w -> [h*w] of per-location L2 norms; subgradient 0 at zero locations
Tensor location_norms(Tape* tape, const Tensor& fmap);
// population variance of a vector -> scalar
Tensor variance(Tape* tape, const Tensor& v);
// n scalar tensors -> [n]
Tensor stack_scalars(Tape* tape, const std::vector<Tensor>& parts);
// -log softmax(logits)[label] over a 1-D logits vector, log-sum-exp stable
Tensor cross_entropy_logits(Tape* tape, const Tensor& logits, int label);
// sum over locations of cross-entropy against `label` for c×h×w logits
Tensor spatial_cross_entropy(Tape* tape, const Tensor& logits, int label);
// Eq-style minimum matching over two already-normalized d×h×w maps: for each
// query location, squared L2 distance to its nearest prototype location,
// summed; gradient routes through the argmin.
Tensor min_matching(Tape* tape, const Tensor& nx, const Tensor& np);

// Per-channel normalization over a batch of c×h×w tensors. In training mode
// batch statistics are used and `running_*` are updated with EMA `momentum`;
// in eval mode the running statistics are frozen inputs. gamma/beta are
// learnable [c] tensors.
std::vector<Tensor> batch_channel_norm(Tape* tape, const std::vector<Tensor>& xs,
                                       const Tensor& gamma, const Tensor& beta,
                                       std::vector<double>& running_mean,
                                       std::vector<double>& running_var, bool training,
                                       double momentum = 0.1, double eps = 1e-5);

}  // namespace lls
