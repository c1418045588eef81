#pragma once

#include <Eigen/Core>

#include "aims/rng.hpp"
#include "json.hpp"

namespace aims {

// Two-layer perceptron: input -> tanh hidden -> linear logits. Rows of the
// data matrices are samples.
struct Mlp {
  Eigen::MatrixXd w1;  // hidden x in
  Eigen::VectorXd b1;
  Eigen::MatrixXd w2;  // out x hidden
  Eigen::VectorXd b2;

  static Mlp init(int in, int hidden, int out, Rng& rng);  // Glorot uniform
  static Mlp zeros(int in, int hidden, int out);

  int in() const { return static_cast<int>(w1.cols()); }
  int hidden() const { return static_cast<int>(w1.rows()); }
  int out() const { return static_cast<int>(w2.rows()); }

  Eigen::MatrixXd hidden_activations(const Eigen::MatrixXd& x) const;
  Eigen::MatrixXd logits_from_hidden(const Eigen::MatrixXd& h) const;
  Eigen::MatrixXd logits(const Eigen::MatrixXd& x) const;
  static Eigen::MatrixXd softmax(const Eigen::MatrixXd& z);

  // Flat parameter view in the fixed order [w1, b1, w2, b2] (row-major
  // matrices); shared by the optimizer and the finite-difference checks.
  int num_params() const;
  Eigen::VectorXd pack() const;
  void unpack(const Eigen::VectorXd& flat);

  // Backprop through the network. dz is dL/dlogits (n x out); dh_extra, when
  // non-empty, is an additional dL/dhidden term (n x hidden). Returns the
  // flat gradient; dx_out (optional) receives dL/dx.
  Eigen::VectorXd backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& h,
                           const Eigen::MatrixXd& dz,
                           const Eigen::MatrixXd& dh_extra = Eigen::MatrixXd()) const;

  nlohmann::json to_json() const;
  static Mlp from_json(const nlohmann::json& j);
};

// Mean cross-entropy of softmax(logits) against integer labels, plus its
// gradient w.r.t. logits ((P - Y)/n).
double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& labels,
                     Eigen::MatrixXd* dlogits = nullptr);

struct Adam {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  Eigen::VectorXd m_, v_;
  int t_ = 0;
};

}  // namespace aims
