#ifndef PLANCRAFT_NN_HPP_
#define PLANCRAFT_NN_HPP_

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace plancraft::nn {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Values are kept at float32 precision (rounded after every update) so that
/// checkpoints store them losslessly; arithmetic runs in double.
struct Parameter {
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
};

void round_to_float(Mat& m);

class ParamStore {
 public:
  /// Uniform(-scale, scale) initialisation; scale 0 gives zeros.
  Parameter& add(const std::string& name, int rows, int cols, double scale, std::mt19937_64& rng);
  Parameter& add_constant(const std::string& name, int rows, int cols, double value);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::vector<std::string>& names() const { return order_; }
  std::size_t size() const;
  void zero_grad();

 private:
  std::map<std::string, Parameter> params_;
  std::vector<std::string> order_;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  void step(ParamStore& params, const AdamConfig& cfg);
  long steps() const { return t_; }

 private:
  long t_ = 0;
};

struct Node {
  Mat value;
  Mat grad;
  Parameter* param = nullptr;
  bool needs_grad = false;
  std::function<void(Node&)> backward;

  void accumulate(const Mat& g);
};
using Var = Node*;

/// Contiguous row range attended over as one sequence.
struct Segment {
  int start = 0;
  int length = 0;
};

/// Source row for every (output row, kernel tap) pair of a 3x3 convolution.
struct ConvPlan {
  int batch = 0, height = 0, width = 0, out_height = 0, out_width = 0, stride = 2;
  std::vector<int> source;  // out_rows * 9, -1 for padding
};
ConvPlan make_conv_plan(int batch, int height, int width, int stride);

/// Tape of operations. Nodes live until the graph is destroyed.
class Graph {
 public:
  explicit Graph(bool record = true) : record_(record) {}

  Var constant(Mat m);
  Var param(const Parameter& p);

  Var matmul(Var a, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  /// 1 - a
  Var one_minus(Var a);
  Var add_row(Var a, Var row);
  Var linear(Var x, const Parameter& w, const Parameter& b);
  Var gelu(Var a);
  Var tanh(Var a);
  Var sigmoid(Var a);
  Var layer_norm(Var x, const Parameter& gain, const Parameter& bias, double eps = 1e-5);
  Var attention(Var q, Var k, Var v, const std::vector<Segment>& segments, int heads);
  Var gather_rows(Var a, const std::vector<int>& rows);
  /// Assembles a `rows`-row matrix; every output row must be written once.
  Var scatter_rows(const std::vector<std::pair<Var, std::vector<int>>>& parts, int rows);
  Var concat_cols(Var a, Var b);
  /// Reinterprets the row-major storage with a new shape.
  Var reshape(Var a, int rows, int cols);
  Var im2col(Var x, const ConvPlan& plan);
  /// Running sum over consecutive groups of `group` rows, left to right.
  Var prefix_sum(Var a, int group);
  Var softmax_rows(Var a);
  /// Mean absolute difference over all elements.
  Var l1(Var pred, const Mat& target);
  /// Mean over rows of -sum_k target_k log softmax(logits)_k.
  Var cross_entropy(Var logits, const Mat& target);

  void backward(Var loss);
  std::size_t size() const { return nodes_.size(); }

 private:
  Var make(Mat value, bool needs_grad);

  bool record_;
  std::deque<Node> nodes_;
};

}  // namespace plancraft::nn

#endif  // PLANCRAFT_NN_HPP_
