#pragma once

// Two-hidden-layer ReLU perceptron regressor trained by full-batch gradient
// descent with momentum on half mean squared error.

#include "tmeta/common.hpp"

#include <json.hpp>

namespace tmeta::ltr {

struct MlpParams {
  Index hidden1 = 64;
  Index hidden2 = 32;
  int epochs = 500;
  double step_size = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
};

void to_json(nlohmann::json& j, const MlpParams& p);
void from_json(const nlohmann::json& j, MlpParams& p);

struct MlpModel {
  MlpParams params;
  MatrixXd w1;  // hidden1 x input
  VectorXd b1;
  MatrixXd w2;  // hidden2 x hidden1
  VectorXd b2;
  VectorXd w3;  // hidden2
  double b3 = 0.0;
  std::vector<double> loss_history;  // training loss at the start of each epoch

  Index input_dim() const { return w1.cols(); }
  Index num_parameters() const;

  VectorXd predict(const RowMatrixXd& features) const;

  /// All weights in a fixed order: w1, b1, w2, b2, w3, b3 (column-major blocks).
  VectorXd flatten() const;
  void unflatten(const VectorXd& theta);
};

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
MlpModel init_mlp(Index input_dim, const MlpParams& params);

/// Half mean squared error and its gradient with respect to flatten().
double mlp_loss_and_gradient(const MlpModel& model, const RowMatrixXd& x, const VectorXd& y,
                             VectorXd* gradient);

/// Throws ComputeError when the loss exceeds 1e6 or becomes non-finite.
MlpModel train_mlp(const RowMatrixXd& x, const VectorXd& y, const MlpParams& params);

void to_json(nlohmann::json& j, const MlpModel& m);
void from_json(const nlohmann::json& j, MlpModel& m);

}  // namespace tmeta::ltr
