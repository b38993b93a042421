#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "mvfuse/checkpoint.hpp"
#include "mvfuse/model.hpp"
#include "mvfuse/optim.hpp"

namespace mvf {

struct TrainConfig {
  int epochs_phase1 = 8;  // detection + small-class heads only
  int epochs_phase2 = 4;  // adds the vehicle trajectory head, warm-started
  int batch_size = 4;
  double lr_start = 1e-3;
  double lr_end = 2e-5;
  AdamConfig adam;

  int total_epochs() const { return epochs_phase1 + epochs_phase2; }

  void validate() const {
    MVF_CHECK_ARG(epochs_phase1 >= 1 && epochs_phase2 >= 0, "need at least one training epoch");
    MVF_CHECK_ARG(batch_size >= 1, "batch size must be positive");
    MVF_CHECK_ARG(lr_start > lr_end && lr_end > 0.0, "need lr_start > lr_end > 0");
  }
};

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  bool vehicle_head = false;
  double total = 0.0;  // per-frame means over the epoch
  double cls = 0.0;
  double reg = 0.0;
  double traj = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  std::string final_checkpoint;  // empty when no checkpoint_dir was given
};

inline void write_train_log_header(std::ostream& os) {
  os << "epoch,lr,vehicle_head,total,cls,reg,traj\n";
}

inline void write_train_log_row(std::ostream& os, const EpochLog& row) {
  os << row.epoch << ',' << row.lr << ',' << (row.vehicle_head ? 1 : 0) << ',' << row.total << ','
     << row.cls << ',' << row.reg << ',' << row.traj << "\n";
}

/// Two-phase training over an in-memory frame list. Frames are visited in
/// order (single worker), gradients are accumulated over each mini-batch,
/// and one cosine schedule spans both phases. A non-finite loss aborts with
/// a numeric_failure error. When `checkpoint_dir` is non-empty, a checkpoint
/// is written after every epoch plus a final `model.ckpt`.
template <class Real>
TrainResult train_model(Model<Real>& model, const std::vector<LabeledFrame>& frames,
                        const TrainConfig& cfg, const std::string& checkpoint_dir = "",
                        std::ostream* log = nullptr) {
  cfg.validate();
  MVF_CHECK(!frames.empty(), Errc::empty_input, "training needs at least one frame");

  Adam<Real> opt(model, cfg.adam);
  const nn::RunCtx<Real> ctx{/*training=*/true, /*sink=*/nullptr};
  const int total = cfg.total_epochs();

  if (!checkpoint_dir.empty()) std::filesystem::create_directories(checkpoint_dir);
  if (log != nullptr) write_train_log_header(*log);

  TrainResult result;
  for (int epoch = 0; epoch < total; ++epoch) {
    EpochLog row;
    row.epoch = epoch;
    row.lr = cosine_lr(epoch, total, cfg.lr_start, cfg.lr_end);
    row.vehicle_head = epoch >= cfg.epochs_phase1;

    for (std::size_t start = 0; start < frames.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch =
          std::min(frames.size() - start, static_cast<std::size_t>(cfg.batch_size));
      opt.zero_grad();
      for (std::size_t j = 0; j < batch; ++j) {
        FrameLoss<Real> fl =
            model.training_loss(frames[start + j], row.vehicle_head, ctx);
        const double total_v = static_cast<double>(fl.loss.total.values()[0]);
        MVF_CHECK(std::isfinite(total_v), Errc::numeric_failure,
                  "non-finite training loss at epoch " + std::to_string(epoch));
        backward(mul_scalar(fl.loss.total, static_cast<Real>(1.0 / static_cast<double>(batch))));
        row.total += total_v;
        row.cls += static_cast<double>(fl.loss.cls.values()[0]);
        row.reg += static_cast<double>(fl.loss.reg.values()[0]);
        row.traj += static_cast<double>(fl.loss.traj.values()[0]);
      }
      opt.step(row.lr);
    }

    const double scale = 1.0 / static_cast<double>(frames.size());
    row.total *= scale;
    row.cls *= scale;
    row.reg *= scale;
    row.traj *= scale;
    if (log != nullptr) write_train_log_row(*log, row);
    result.epochs.push_back(row);

    if (!checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      save_checkpoint<Real>((std::filesystem::path(checkpoint_dir) / name).string(), model);
    }
  }

  if (!checkpoint_dir.empty()) {
    result.final_checkpoint = (std::filesystem::path(checkpoint_dir) / "model.ckpt").string();
    save_checkpoint<Real>(result.final_checkpoint, model);
  }
  return result;
}

}  // namespace mvf
