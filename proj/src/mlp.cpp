#include "tmeta/mlp.hpp"

#include <cmath>
#include <sstream>

namespace tmeta::ltr {

using json = nlohmann::json;

void MlpParams::validate() const {
  if (hidden1 < 1 || hidden2 < 1) throw UsageError("hidden dims must be >= 1");
  if (epochs < 0) throw UsageError("epochs must be >= 0");
  if (!(step_size > 0.0)) throw UsageError("step_size must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw UsageError("momentum must lie in [0, 1)");
}

void to_json(json& j, const MlpParams& p) {
  j = json{{"hidden_dims", {p.hidden1, p.hidden2}},
           {"epochs", p.epochs},
           {"step_size", p.step_size},
           {"momentum", p.momentum},
           {"seed", p.seed}};
}

void from_json(const json& j, MlpParams& p) {
  p = MlpParams{};
  if (j.contains("hidden_dims")) {
    const auto dims = j.at("hidden_dims").get<std::vector<Index>>();
    if (dims.size() != 2) throw UsageError("hidden_dims must hold two integers");
    p.hidden1 = dims[0];
    p.hidden2 = dims[1];
  }
  if (j.contains("epochs")) p.epochs = j.at("epochs").get<int>();
  if (j.contains("step_size")) p.step_size = j.at("step_size").get<double>();
  if (j.contains("momentum")) p.momentum = j.at("momentum").get<double>();
  if (j.contains("seed")) p.seed = j.at("seed").get<std::uint64_t>();
}

Index MlpModel::num_parameters() const {
  return w1.size() + b1.size() + w2.size() + b2.size() + w3.size() + 1;
}

namespace {

struct Forward {
  MatrixXd z1, a1, z2, a2;  // samples in columns
  VectorXd out;
};

Forward forward(const MlpModel& m, const RowMatrixXd& x) {
  Forward f;
  f.z1 = (m.w1 * x.transpose()).colwise() + m.b1;
  f.a1 = f.z1.cwiseMax(0.0);
  f.z2 = (m.w2 * f.a1).colwise() + m.b2;
  f.a2 = f.z2.cwiseMax(0.0);
  f.out = (m.w3.transpose() * f.a2).transpose().array() + m.b3;
  return f;
}

}  // namespace

VectorXd MlpModel::predict(const RowMatrixXd& features) const {
  if (features.cols() != input_dim()) {
    throw DataError("feature dim " + std::to_string(features.cols()) + " does not match model input dim " +
                    std::to_string(input_dim()));
  }
  return forward(*this, features).out;
}

VectorXd MlpModel::flatten() const {
  VectorXd theta(num_parameters());
  Index o = 0;
  auto put = [&](const auto& block) {
    theta.segment(o, block.size()) = Eigen::Map<const VectorXd>(block.data(), block.size());
    o += block.size();
  };
  put(w1);
  put(b1);
  put(w2);
  put(b2);
  put(w3);
  theta(o) = b3;
  return theta;
}

void MlpModel::unflatten(const VectorXd& theta) {
  if (theta.size() != num_parameters()) throw DataError("parameter vector has the wrong length");
  Index o = 0;
  auto take = [&](auto& block) {
    Eigen::Map<VectorXd>(block.data(), block.size()) = theta.segment(o, block.size());
    o += block.size();
  };
  take(w1);
  take(b1);
  take(w2);
  take(b2);
  take(w3);
  b3 = theta(o);
}

MlpModel init_mlp(Index input_dim, const MlpParams& params) {
  params.validate();
  if (input_dim < 1) throw DataError("MLP input dim must be >= 1");
  MlpModel m;
  m.params = params;
  Rng rng(params.seed);
  auto fill = [&](auto& block, Index fan_in) {
    const double r = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Index i = 0; i < block.size(); ++i) block.data()[i] = rng.uniform(-r, r);
  };
  m.w1.resize(params.hidden1, input_dim);
  m.b1.resize(params.hidden1);
  m.w2.resize(params.hidden2, params.hidden1);
  m.b2.resize(params.hidden2);
  m.w3.resize(params.hidden2);
  fill(m.w1, input_dim);
  fill(m.b1, input_dim);
  fill(m.w2, params.hidden1);
  fill(m.b2, params.hidden1);
  fill(m.w3, params.hidden2);
  VectorXd b3(1);
  fill(b3, params.hidden2);
  m.b3 = b3(0);
  return m;
}

double mlp_loss_and_gradient(const MlpModel& m, const RowMatrixXd& x, const VectorXd& y,
                             VectorXd* gradient) {
  const auto f = forward(m, x);
  const double n = static_cast<double>(x.rows());
  const VectorXd err = f.out - y;
  const double loss = 0.5 * err.squaredNorm() / n;
  if (!gradient) return loss;

  const Eigen::RowVectorXd d_out = err.transpose() / n;  // 1 x n
  MlpModel g = m;
  g.w3 = f.a2 * d_out.transpose();
  g.b3 = d_out.sum();
  const MatrixXd d2 = (m.w3 * d_out).cwiseProduct((f.z2.array() > 0.0).cast<double>().matrix());
  g.w2 = d2 * f.a1.transpose();
  g.b2 = d2.rowwise().sum();
  const MatrixXd d1 = (m.w2.transpose() * d2).cwiseProduct((f.z1.array() > 0.0).cast<double>().matrix());
  g.w1 = d1 * x;
  g.b1 = d1.rowwise().sum();
  *gradient = g.flatten();
  return loss;
}

MlpModel train_mlp(const RowMatrixXd& x, const VectorXd& y, const MlpParams& params) {
  if (x.rows() < 1) throw DataError("MLP training needs at least one instance");
  if (x.rows() != y.size()) throw DataError("target count does not match feature rows");
  if (!all_finite(x) || !all_finite(y)) throw DataError("MLP training data is not finite");
  MlpModel m = init_mlp(x.cols(), params);
  VectorXd theta = m.flatten();
  VectorXd velocity = VectorXd::Zero(theta.size());
  VectorXd grad;
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    const double loss = mlp_loss_and_gradient(m, x, y, &grad);
    if (!std::isfinite(loss) || loss > 1e6) {
      std::ostringstream msg;
      msg << "MLP training diverged at epoch " << epoch << ": loss " << loss
          << " (step_size " << params.step_size << ", momentum " << params.momentum << ")";
      throw ComputeError(msg.str());
    }
    m.loss_history.push_back(loss);
    velocity = params.momentum * velocity - params.step_size * grad;
    theta += velocity;
    m.unflatten(theta);
  }
  return m;
}

void to_json(json& j, const MlpModel& m) {
  const VectorXd theta = m.flatten();
  j = json{{"params", m.params},
           {"input_dim", m.input_dim()},
           {"weights", std::vector<double>(theta.data(), theta.data() + theta.size())}};
}

void from_json(const json& j, MlpModel& m) {
  const auto params = j.at("params").get<MlpParams>();
  const auto input_dim = j.at("input_dim").get<Index>();
  m = init_mlp(input_dim, params);
  const auto w = j.at("weights").get<std::vector<double>>();
  m.unflatten(Eigen::Map<const VectorXd>(w.data(), static_cast<Index>(w.size())));
}

}  // namespace tmeta::ltr
