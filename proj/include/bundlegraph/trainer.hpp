#ifndef BUNDLEGRAPH_TRAINER_HPP
#define BUNDLEGRAPH_TRAINER_HPP

#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "bundlegraph/dataset.hpp"
#include "bundlegraph/embedding.hpp"
#include "bundlegraph/evaluation.hpp"
#include "bundlegraph/objective.hpp"
#include "bundlegraph/optimizer.hpp"

namespace bundlegraph {

/// Uniform positive edges with rejection-sampled negatives.
class TripleSampler {
 public:
  static constexpr std::size_t kMaxRejections = 1000;

  TripleSampler(const InteractionMatrix& train)
      : edges_(train.edges()), adj_(train), num_bundles_(train.cols()) {
    if (edges_.empty()) throw DataError("cannot sample from an empty training split");
  }

  /// `batch_size` positives, each paired with `negatives` negatives. Positives
  /// whose user has no free bundle after kMaxRejections draws are skipped and
  /// counted in `skipped`.
  std::vector<TrainingTriple> sample(std::size_t batch_size, std::size_t negatives, Rng& rng,
                                     std::size_t* skipped = nullptr) const {
    std::uniform_int_distribution<std::size_t> pick_edge(0, edges_.size() - 1);
    std::uniform_int_distribution<Index> pick_bundle(0, num_bundles_ - 1);
    std::vector<TrainingTriple> out;
    out.reserve(batch_size * negatives);
    for (std::size_t n = 0; n < batch_size; ++n) {
      const Edge& e = edges_[pick_edge(rng)];
      for (std::size_t k = 0; k < negatives; ++k) {
        bool found = false;
        for (std::size_t tries = 0; tries < kMaxRejections; ++tries) {
          const Index b = pick_bundle(rng);
          if (!adj_.contains(e.left, b)) {
            out.push_back({e.left, e.right, b});
            found = true;
            break;
          }
        }
        if (!found && skipped) ++*skipped;
      }
    }
    return out;
  }

 private:
  std::vector<Edge> edges_;
  Adjacency adj_;
  Index num_bundles_;
};

inline std::vector<TrainingTriple> sample_batch(const Dataset& d, const TrainConfig& cfg, Rng& rng,
                                                std::size_t* skipped = nullptr) {
  return TripleSampler(d.ub_train).sample(cfg.batch_size, cfg.negatives_per_positive, rng, skipped);
}

struct EpochRecord {
  std::size_t epoch = 0;
  LossBreakdown loss;  // averaged over the epoch's batches
  bool evaluated = false;
  double val_recall20 = 0;
  double val_ndcg20 = 0;
  std::size_t skipped_negatives = 0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_recall20 = -1;

  /// Tab-separated, one line per epoch.
  void write_tsv(std::ostream& os) const {
    os << "epoch\tbpr\tcl_user\tcl_bundle\treg\ttotal\tval_recall@20\tval_ndcg@20\n";
    char buf[512];
    for (const auto& e : epochs) {
      std::snprintf(buf, sizeof(buf), "%zu\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t", e.epoch, e.loss.bpr,
                    e.loss.contrast_user, e.loss.contrast_bundle, e.loss.reg, e.loss.total);
      os << buf;
      if (e.evaluated) {
        std::snprintf(buf, sizeof(buf), "%.6f\t%.6f\n", e.val_recall20, e.val_ndcg20);
        os << buf;
      } else {
        os << "NA\tNA\n";
      }
    }
  }
};

template <class T>
struct TrainResult {
  EmbeddingTable<T> best;  // checkpoint with the best validation Recall@20
  EmbeddingTable<T> last;
  TrainingLog log;
};

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  bool validate = true;  // rank the validation split every eval_every epochs
};

/// Runs the epoch loop. With set_num_threads(1) (and for any thread count, since
/// all kernels are row-partitioned) the result is a pure function of cfg.seed.
template <class T>
TrainResult<T> train(const Dataset& d, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  if (auto errs = cfg.validate(); !errs.empty()) throw ConfigError("invalid training config", errs);
  const auto graphs = ModelGraphs<T>::build(d);
  Rng init_rng = make_stream(cfg.seed, "init");
  Rng sample_rng = make_stream(cfg.seed, "sampling");
  Rng aug_rng = make_stream(cfg.seed, "augmentation");

  TrainResult<T> res;
  EmbeddingTable<T> theta = xavier_init<T>(d.num_users, d.num_bundles, d.num_items, cfg.dim, init_rng);
  AdamState<T> adam(theta);
  const TripleSampler sampler(d.ub_train);
  const std::size_t batches =
      (d.ub_train.nnz() + cfg.batch_size - 1) / cfg.batch_size;
  const bool can_validate = hooks.validate && d.ub_valid.nnz() > 0;
  const std::size_t k20[] = {20};
  std::size_t since_best = 0;
  res.best = theta;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    std::optional<StepPlans<T>> epoch_plans;
    if (cfg.aug.resample == ResamplePolicy::per_epoch) epoch_plans = draw_step_plans(graphs, cfg, aug_rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const auto batch = sampler.sample(cfg.batch_size, cfg.negatives_per_positive, sample_rng,
                                        &rec.skipped_negatives);
      if (batch.empty()) continue;
      EmbeddingTable<T> grad;
      LossBreakdown lb;
      try {
        if (epoch_plans) {
          lb = evaluate_objective(graphs, theta, cfg, batch, *epoch_plans, &grad);
        } else {
          const auto plans = draw_step_plans(graphs, cfg, aug_rng);
          lb = evaluate_objective(graphs, theta, cfg, batch, plans, &grad);
        }
      } catch (const NumericError& e) {
        throw NumericError("diverged at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(b + 1) + ": " + e.what());
      }
      adam.step(theta, grad, cfg.lr);
      rec.loss.bpr += lb.bpr;
      rec.loss.contrast_user += lb.contrast_user;
      rec.loss.contrast_bundle += lb.contrast_bundle;
      rec.loss.reg += lb.reg;
      rec.loss.total += lb.total;
      rec.loss.contrast_terms = lb.contrast_terms;
      rec.loss.zero_norm_pairs += lb.zero_norm_pairs;
    }
    const double nb = static_cast<double>(batches);
    rec.loss.bpr /= nb;
    rec.loss.contrast_user /= nb;
    rec.loss.contrast_bundle /= nb;
    rec.loss.reg /= nb;
    rec.loss.total /= nb;

    bool improved = false;
    if (can_validate && (epoch % cfg.eval_every == 0 || epoch == cfg.epochs)) {
      auto rep = evaluate_model(theta, graphs, cfg, d, k20, Split::valid, MaskPolicy::train);
      rec.evaluated = true;
      rec.val_recall20 = rep.metrics.recall[20];
      rec.val_ndcg20 = rep.metrics.ndcg[20];
      if (rec.val_recall20 > res.log.best_val_recall20) {
        res.log.best_val_recall20 = rec.val_recall20;
        res.log.best_epoch = epoch;
        res.best = theta;
        improved = true;
      }
    } else if (!can_validate) {
      res.log.best_epoch = epoch;
      res.best = theta;
    }
    res.log.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (rec.evaluated) since_best = improved ? 0 : since_best + cfg.eval_every;
    if (cfg.patience > 0 && since_best >= cfg.patience) break;
  }
  res.last = std::move(theta);
  return res;
}

}  // namespace bundlegraph

#endif  // BUNDLEGRAPH_TRAINER_HPP
