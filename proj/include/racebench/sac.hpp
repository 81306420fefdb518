#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include <Eigen/Core>

namespace racebench {

// Fully connected network with tanh hidden layers and a linear output.
// Parameters live in one flat vector: per layer, W (out x in, column-major)
// followed by b.
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::vector<int> sizes, std::mt19937_64& rng);

  // Post-activation outputs of every layer; acts[0] is the input batch.
  struct Tape {
    std::vector<Eigen::MatrixXd> acts;
  };

  // Columns are samples.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Tape* tape = nullptr) const;
  // Adds parameter gradients of <upstream, output> to `grad` and returns the
  // gradient with respect to the input batch.
  Eigen::MatrixXd backward(const Tape& tape, const Eigen::MatrixXd& upstream, Eigen::VectorXd& grad) const;

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int output_dim() const { return sizes_.empty() ? 0 : sizes_.back(); }
  Eigen::Index num_params() const { return params_.size(); }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }

 private:
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t layer) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Eigen::VectorXd params_;
};

struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
};

constexpr double kLogStdMin = -20.0;
constexpr double kLogStdMax = 2.0;

struct ActionSample {
  Eigen::VectorXd action;  // strictly inside (-1, 1)
  double log_prob = 0.0;
};

// Density of a = tanh(u), u ~ N(mean, exp(log_std)^2), per dimension summed.
double squashed_gaussian_log_prob(const Eigen::VectorXd& mean, const Eigen::VectorXd& log_std,
                                  const Eigen::VectorXd& action);

// The actor outputs [mean; log_std] with log_std clamped to [kLogStdMin, kLogStdMax].
ActionSample sample_action(const Mlp& actor, const Eigen::VectorXd& obs, std::mt19937_64& rng,
                           bool deterministic = false);
ActionSample sample_action(const Mlp& actor, const Eigen::VectorXd& obs, std::uint64_t seed,
                           bool deterministic = false);

struct SacConfig {
  double gamma = 0.99;
  int batch_size = 64;
  int train_freq = 1;
  int gradient_steps = 1;
  int episode_len = 10000;
  long buffer_capacity = 1000000;
  double lr = 3e-4;
  double tau = 0.005;
  std::optional<double> entropy_target;  // -act_dim when absent
  int warmup_steps = 1000;
  std::vector<int> hidden = {256, 256};
  double init_alpha = 1.0;
  bool auto_alpha = true;
  long checkpoint_interval = 0;  // env steps between checkpoints, 0 = only at the end

  void validate() const;
};

struct Transition {
  Eigen::VectorXd obs;
  Eigen::VectorXd action;
  double reward = 0.0;
  Eigen::VectorXd next_obs;
  bool done = false;  // crash only; time-limit truncation keeps bootstrapping
};

struct Batch {
  Eigen::MatrixXd obs;
  Eigen::MatrixXd action;
  Eigen::VectorXd reward;
  Eigen::MatrixXd next_obs;
  Eigen::VectorXd done;

  int size() const { return static_cast<int>(reward.size()); }
};

// Ring buffer; storage grows on demand up to the capacity.
class ReplayBuffer {
 public:
  ReplayBuffer(long capacity, int obs_dim, int act_dim);

  void add(const Transition& t);
  Batch sample(int batch_size, std::mt19937_64& rng) const;
  Transition at(long index) const;

  long size() const { return size_; }
  long capacity() const { return capacity_; }
  long next_slot() const { return next_; }

 private:
  void reserve_slot(long slot);

  long capacity_;
  int obs_dim_;
  int act_dim_;
  long size_ = 0;
  long next_ = 0;
  Eigen::MatrixXd obs_, act_, next_obs_;
  Eigen::VectorXd rew_, done_;
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double alpha_loss = 0.0;
  double alpha = 0.0;
};

class SacAgent {
 public:
  SacAgent(int obs_dim, int act_dim, SacConfig config, std::uint64_t seed);

  ActionSample act(const Eigen::VectorXd& obs, bool deterministic = false);

  // One full gradient step: temperature, critics, actor, then targets.
  SacLosses update(const Batch& batch);

  // Pieces of `update`, exposed for tests.
  Eigen::VectorXd critic_target(const Batch& batch);
  double update_critics(const Batch& batch);
  double update_actor(const Batch& batch);
  void update_targets();

  const Mlp& actor() const { return actor_; }
  Mlp& actor() { return actor_; }
  Mlp& q1() { return q1_; }
  Mlp& q2() { return q2_; }
  const Mlp& q1() const { return q1_; }
  const Mlp& q2() const { return q2_; }
  const Mlp& q1_target() const { return q1_target_; }
  const Mlp& q2_target() const { return q2_target_; }
  Mlp& q1_target() { return q1_target_; }
  Mlp& q2_target() { return q2_target_; }
  double alpha() const;
  double entropy_target() const { return entropy_target_; }
  const SacConfig& config() const { return config_; }
  int obs_dim() const { return obs_dim_; }
  int act_dim() const { return act_dim_; }

  void save(const std::filesystem::path& path) const;
  static SacAgent load(const std::filesystem::path& path, SacConfig config = {});

 private:
  struct PolicyPass {
    Mlp::Tape tape;
    Eigen::MatrixXd noise, mean, log_std, u, action;
    Eigen::VectorXd log_prob;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> clamped;
  };
  PolicyPass policy_pass(const Eigen::MatrixXd& obs, bool keep_tape);
  static Eigen::MatrixXd stack(const Eigen::MatrixXd& obs, const Eigen::MatrixXd& action);
  void check_finite(const SacLosses& losses, const Batch& batch) const;

  int obs_dim_;
  int act_dim_;
  SacConfig config_;
  std::mt19937_64 rng_;
  Mlp actor_, q1_, q2_, q1_target_, q2_target_;
  Adam actor_opt_, q1_opt_, q2_opt_, alpha_opt_;
  Eigen::VectorXd log_alpha_;  // size 1 so Adam can drive it
  double entropy_target_;
};

// Minimal episodic interface; actions are normalized to [-1, 1]^act_dim.
struct RlStep {
  Eigen::VectorXd obs;
  double reward = 0.0;
  bool terminal = false;   // crash
  bool truncated = false;  // any other episode end
  bool lap_complete = false;
};

class RlEnvironment {
 public:
  virtual ~RlEnvironment() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual Eigen::VectorXd reset(std::uint64_t seed) = 0;
  virtual RlStep step(const Eigen::VectorXd& action) = 0;
};

struct TrainLogRow {
  long step = 0;
  int episode = 0;
  double ret = 0.0;
  bool lap_complete = false;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double alpha = 0.0;
};

void write_train_log(const std::vector<TrainLogRow>& rows, const std::filesystem::path& path);

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> log;
};

struct TrainResult {
  SacAgent agent;
  std::vector<TrainLogRow> log;
};

TrainResult train(RlEnvironment& env, const SacConfig& config, long total_steps, std::uint64_t seed,
                  const TrainOptions& options = {});

// Mean return of `episodes` rollouts; a null agent draws uniform random actions.
double evaluate_return(RlEnvironment& env, SacAgent* agent, int episodes, std::uint64_t seed, int max_steps);

}  // namespace racebench
