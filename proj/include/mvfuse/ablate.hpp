#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "mvfuse/config.hpp"
#include "mvfuse/evaluate.hpp"
#include "mvfuse/model.hpp"
#include "mvfuse/train.hpp"

namespace mvf {

enum class AblationAxis { fusion_views, backbone_views, fusion_strategy };

inline const char* to_string(AblationAxis a) {
  switch (a) {
    case AblationAxis::fusion_views: return "fusion_views";
    case AblationAxis::backbone_views: return "backbone_views";
    case AblationAxis::fusion_strategy: return "fusion_strategy";
  }
  return "?";
}

struct AblationRow {
  std::string label;
  ModelConfig model;       // after budget matching
  std::size_t params = 0;
  double budget_gap = 0.0;  // |params - base_params| / base_params
  bool is_base = false;
  EvalResult eval;
};

struct AblationTable {
  AblationAxis axis;
  std::string title;
  std::vector<AblationRow> rows;
};

struct AblationReport {
  std::size_t base_params = 0;
  std::vector<AblationTable> tables;
};

namespace detail {

/// Re-derive the cross-module widths after a knob edit.
inline void sync_model_wiring(ModelConfig& m) {
  m.backbone.rv_in = m.fusion.rv_channels;
  m.backbone.bev_in = m.fusion.bev_channels;
  m.det.in_channels = m.backbone.out_channels;
}

inline std::size_t count_model_params(ModelConfig m) {
  sync_model_wiring(m);
  m.validate();
  Rng rng(1);  // parameter *count* does not depend on the seed
  Model<float> net(m, rng);
  return net.param_count();
}

inline std::size_t budget_distance(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

using WidthKnob = std::function<int&(ModelConfig&)>;

/// Hill-climb each knob in turn (coarse to fine) toward the target parameter
/// count. Every knob is a positive channel width, so the count is monotone in
/// it and single-direction stepping with a strict-improvement test converges.
inline ModelConfig match_budget(ModelConfig cfg, std::size_t target,
                                const std::vector<WidthKnob>& knobs, int min_width = 2,
                                int max_steps = 4096) {
  ModelConfig best = cfg;
  std::size_t best_count = count_model_params(best);
  int steps = 0;
  for (const WidthKnob& knob : knobs) {
    bool moved = true;
    while (moved && best_count != target && steps < max_steps) {
      moved = false;
      const int dir = best_count < target ? 1 : -1;
      ModelConfig trial = best;
      int& field = knob(trial);
      if (field + dir < min_width) break;
      field += dir;
      ++steps;
      const std::size_t c = count_model_params(trial);
      if (budget_distance(c, target) < budget_distance(best_count, target)) {
        best = std::move(trial);
        best_count = c;
        moved = true;
      }
    }
  }
  sync_model_wiring(best);
  return best;
}

/// Knob schedule per variant: one coarse width that owns most of the variant's
/// removed capacity, then progressively finer widths for the final trim.
inline std::vector<WidthKnob> knobs_for(AblationAxis axis, const ModelConfig& variant) {
  std::vector<WidthKnob> knobs;
  switch (axis) {
    case AblationAxis::fusion_views:
      if (variant.fusion.views == FusionViews::rv_only)
        knobs.push_back([](ModelConfig& m) -> int& { return m.fusion.rv_channels; });
      else
        knobs.push_back([](ModelConfig& m) -> int& { return m.fusion.bev_channels; });
      break;
    case AblationAxis::backbone_views:
      if (variant.backbone.views == BackboneViews::rv_only)
        knobs.push_back([](ModelConfig& m) -> int& { return m.backbone.rv_base; });
      else
        knobs.push_back([](ModelConfig& m) -> int& { return m.backbone.bev_base; });
      break;
    case AblationAxis::fusion_strategy:
      knobs.push_back([](ModelConfig& m) -> int& { return m.fusion.rv_channels; });
      break;
  }
  knobs.push_back([](ModelConfig& m) -> int& { return m.traj.hidden; });
  knobs.push_back([](ModelConfig& m) -> int& { return m.fusion.mlp_channels; });
  return knobs;
}

struct VariantSpec {
  AblationAxis axis;
  std::string label;
  ModelConfig model;
  bool is_base = false;
};

inline std::vector<VariantSpec> variant_specs(const ModelConfig& base) {
  std::vector<VariantSpec> specs;
  auto add = [&](AblationAxis axis, std::string label, auto&& edit, bool is_base = false) {
    ModelConfig m = base;
    edit(m);
    specs.push_back({axis, std::move(label), std::move(m), is_base});
  };
  add(AblationAxis::fusion_views, "RV only",
      [](ModelConfig& m) { m.fusion.views = FusionViews::rv_only; });
  add(AblationAxis::fusion_views, "BEV only",
      [](ModelConfig& m) { m.fusion.views = FusionViews::bev_only; });
  add(AblationAxis::fusion_views, "Both", [](ModelConfig&) {}, true);
  add(AblationAxis::backbone_views, "RV only",
      [](ModelConfig& m) { m.backbone.views = BackboneViews::rv_only; });
  add(AblationAxis::backbone_views, "BEV only",
      [](ModelConfig& m) { m.backbone.views = BackboneViews::bev_only; });
  add(AblationAxis::backbone_views, "Both", [](ModelConfig&) {}, true);
  add(AblationAxis::fusion_strategy, "One-shot",
      [](ModelConfig& m) { m.fusion.strategy = FusionStrategy::one_shot; });
  add(AblationAxis::fusion_strategy, "Sequential", [](ModelConfig&) {}, true);
  return specs;
}

/// Key identifying a unique train/eval run; the base appears in all tables
/// but is trained exactly once.
inline std::tuple<int, int, int> run_key(const ModelConfig& m) {
  return {static_cast<int>(m.fusion.strategy), static_cast<int>(m.fusion.views),
          static_cast<int>(m.backbone.views)};
}

inline std::string fmt_opt(const std::optional<double>& v, int precision = 3) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

}  // namespace detail

/// Train and evaluate every ablation variant. Each variant's width budget is
/// matched to the base model before training; each run starts from a fresh
/// generator seeded with `cfg.seed`, so the base row reproduces a standalone
/// training run with the same config bit for bit.
inline AblationReport run_ablation(const RunConfig& cfg,
                                   const std::vector<LabeledFrame>& train_frames,
                                   const std::vector<LabeledFrame>& eval_frames,
                                   std::ostream* progress = nullptr) {
  MVF_CHECK_ARG(cfg.model.fusion.strategy == FusionStrategy::sequential &&
                    cfg.model.fusion.views == FusionViews::both &&
                    cfg.model.backbone.views == BackboneViews::both,
                "ablation expects the base config (sequential fusion, both views)");

  AblationReport report;
  report.base_params = detail::count_model_params(cfg.model);

  std::map<std::tuple<int, int, int>, AblationRow> runs;
  std::vector<detail::VariantSpec> specs = detail::variant_specs(cfg.model);

  // Budget-match and train each unique configuration.
  for (const detail::VariantSpec& spec : specs) {
    const auto key = detail::run_key(spec.model);
    if (runs.count(key)) continue;

    AblationRow row;
    row.label = spec.label;
    row.is_base = spec.is_base;
    row.model = spec.is_base
                    ? cfg.model
                    : detail::match_budget(spec.model, report.base_params,
                                           detail::knobs_for(spec.axis, spec.model));
    row.params = detail::count_model_params(row.model);
    row.budget_gap = static_cast<double>(detail::budget_distance(row.params, report.base_params)) /
                     static_cast<double>(report.base_params);

    if (progress)
      *progress << "[ablate] " << to_string(spec.axis) << " / " << spec.label << ": "
                << row.params << " params (gap " << std::fixed << std::setprecision(3)
                << 100.0 * row.budget_gap << "%)" << std::endl;

    Rng rng(cfg.seed);
    Model<float> net(row.model, rng);
    train_model(net, train_frames, cfg.train);
    row.eval = evaluate_model(net, eval_frames, cfg.eval);

    if (progress) {
      const ClassEval& veh = row.eval.per_class[0];
      *progress << "[ablate]   vehicle AP " << std::fixed << std::setprecision(3) << veh.ap[0]
                << " / " << veh.ap[1] << std::endl;
    }
    runs.emplace(key, std::move(row));
  }

  // Assemble the tables; the shared base row is copied into each.
  const std::array<std::pair<AblationAxis, const char*>, 3> tables = {
      {{AblationAxis::fusion_views, "Views in temporal fusion"},
       {AblationAxis::backbone_views, "Views in the backbone"},
       {AblationAxis::fusion_strategy, "Temporal fusion strategy"}}};
  for (const auto& [axis, title] : tables) {
    AblationTable table{axis, title, {}};
    for (const detail::VariantSpec& spec : specs) {
      if (spec.axis != axis) continue;
      AblationRow row = runs.at(detail::run_key(spec.model));
      row.label = spec.label;  // the shared run keeps each table's own label
      row.is_base = spec.is_base;
      table.rows.push_back(std::move(row));
    }
    report.tables.push_back(std::move(table));
  }
  return report;
}

inline void write_ablation_table(std::ostream& os, const AblationTable& table) {
  os << "== " << table.title << " ==\n";
  os << std::left << std::setw(14) << "variant" << std::right << std::setw(10) << "params"
     << std::setw(8) << "gap%" << std::setw(9) << "vehAP.5" << std::setw(9) << "vehAP.7"
     << std::setw(9) << "pedAP.1" << std::setw(9) << "bikeAP.1" << std::setw(8) << "L2@0s"
     << std::setw(8) << "L2@1s" << std::setw(8) << "L2@3s" << '\n';
  for (const AblationRow& row : table.rows) {
    const ClassEval& veh = row.eval.per_class[0];
    const ClassEval& ped = row.eval.per_class[1];
    const ClassEval& bike = row.eval.per_class[2];
    os << std::left << std::setw(14) << (row.is_base ? row.label + " *" : row.label) << std::right
       << std::setw(10) << row.params << std::setw(8) << std::fixed << std::setprecision(2)
       << 100.0 * row.budget_gap << std::setw(9) << std::setprecision(3) << veh.ap[0]
       << std::setw(9) << veh.ap[1] << std::setw(9) << ped.ap[0] << std::setw(9) << bike.ap[0]
       << std::setw(8) << detail::fmt_opt(veh.l2[0]) << std::setw(8) << detail::fmt_opt(veh.l2[1])
       << std::setw(8) << detail::fmt_opt(veh.l2[2]) << '\n';
  }
}

/// Human-readable report: one table per axis plus the directional reading of
/// each axis. The directions are observations about this run, not checks; a
/// desk-scale run can land either way without being wrong.
inline void write_ablation_tables(std::ostream& os, const AblationReport& report) {
  for (const AblationTable& table : report.tables) {
    write_ablation_table(os, table);
    os << '\n';
  }
  os << "Directional observations (vehicle AP@" << 0.5 << ", reported, not enforced):\n";
  for (const AblationTable& table : report.tables) {
    const AblationRow* base = nullptr;
    double best_other = 0.0;
    std::string best_label;
    for (const AblationRow& row : table.rows) {
      if (row.is_base) {
        base = &row;
      } else if (row.eval.per_class[0].ap[0] >= best_other) {
        best_other = row.eval.per_class[0].ap[0];
        best_label = row.label;
      }
    }
    if (!base || best_label.empty()) continue;
    const double base_ap = base->eval.per_class[0].ap[0];
    os << "  " << std::left << std::setw(16) << to_string(table.axis) << std::right << base->label
       << " " << std::fixed << std::setprecision(3) << base_ap << " vs best alternative ("
       << best_label << ") " << best_other << " -> "
       << (base_ap >= best_other ? "consistent" : "not consistent") << '\n';
  }
}

inline void write_ablation_csv(std::ostream& os, const AblationReport& report) {
  os << "axis,variant,is_base,params,budget_gap,veh_ap_low,veh_ap_high,ped_ap_low,ped_ap_high,"
        "bike_ap_low,bike_ap_high,veh_l2_0s,veh_l2_1s,veh_l2_3s\n";
  auto opt_field = [](const std::optional<double>& v) -> std::string {
    if (!v) return "";
    std::ostringstream s;
    s << *v;
    return s.str();
  };
  for (const AblationTable& table : report.tables) {
    for (const AblationRow& row : table.rows) {
      const ClassEval& veh = row.eval.per_class[0];
      const ClassEval& ped = row.eval.per_class[1];
      const ClassEval& bike = row.eval.per_class[2];
      os << to_string(table.axis) << ',' << row.label << ',' << (row.is_base ? 1 : 0) << ','
         << row.params << ',' << row.budget_gap << ',' << veh.ap[0] << ',' << veh.ap[1] << ','
         << ped.ap[0] << ',' << ped.ap[1] << ',' << bike.ap[0] << ',' << bike.ap[1] << ','
         << opt_field(veh.l2[0]) << ',' << opt_field(veh.l2[1]) << ',' << opt_field(veh.l2[2])
         << '\n';
    }
  }
}

}  // namespace mvf
