#pragma once

// Public entry point for the KDF network: build a model from the loaded
// vocabularies, train it, annotate tables with it, export column embeddings.

#include <bit>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "anameta/annotation.hpp"
#include "anameta/kdf/gradcheck.hpp"
#include "anameta/kdf/model.hpp"
#include "anameta/kdf/train.hpp"
#include "anameta/taxonomy.hpp"

namespace anameta::kdf {

inline HeadLabels head_labels(const Vocabularies& vocab) {
  if (!vocab.loaded()) throw Error(ErrorCode::MissingVocabulary, "kdf heads need loaded vocabularies");
  return {vocab.measure_type_labels(), vocab.dimension_type_labels(), vocab.agg_functions()};
}

/// Output widths must match the vocabularies they will be decoded with.
inline void check_heads(const KdfModel& m, const Vocabularies& vocab) {
  if (!(m.heads == head_labels(vocab)))
    throw Error(ErrorCode::CheckpointMismatch, "model heads were trained with different vocabularies");
}

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// A trained model plus, optionally, the parameters of each task's best
/// validation epoch. Tasks without a selection use the final parameters.
struct KdfPredictor {
  KdfModel model;
  std::map<Task, ParamSet<float>> selected;
  std::map<Task, int> selected_epoch;
};

/// Per-task best-epoch predictor from a run with TrainOptions::keep_best.
inline KdfPredictor select_best_epochs(KdfModel model, const TrainResult& r) {
  KdfPredictor p{std::move(model), {}, {}};
  for (Task task : kAllTasks) {
    const std::string name(task_name(task));
    const auto it = r.best_params.find(name);
    if (it == r.best_params.end()) continue;
    p.selected[task] = it->second;
    p.selected_epoch[task] = r.best_epoch.at(name);
  }
  return p;
}

/// `dir/final.ckpt`, one `epoch_<k>.ckpt` per selected epoch, and
/// `selection.json` mapping task names to epochs.
inline void save_predictor(const KdfPredictor& p, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_checkpoint(p.model, dir / "final.ckpt");
  nlohmann::ordered_json sel = nlohmann::ordered_json::object();
  std::map<int, const ParamSet<float>*> epochs;
  for (const auto& [task, epoch] : p.selected_epoch) {
    sel[std::string(task_name(task))] = epoch;
    epochs.emplace(epoch, &p.selected.at(task));
  }
  for (const auto& [epoch, ps] : epochs) {
    KdfModel snap{p.model.config, p.model.heads, *ps, epoch, 0};
    save_checkpoint(snap, dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
  }
  std::ofstream out(dir / "selection.json", std::ios::binary);
  out << nlohmann::ordered_json{{"final", "final.ckpt"}, {"tasks", sel}}.dump(2) << '\n';
  if (!out) throw Error(ErrorCode::Io, "cannot write " + (dir / "selection.json").string());
}

/// Accepts either a single checkpoint file or a directory from save_predictor.
inline KdfPredictor load_predictor(const std::filesystem::path& path) {
  if (!std::filesystem::is_directory(path)) return {load_checkpoint(path), {}, {}};
  KdfPredictor p{load_checkpoint(path / "final.ckpt"), {}, {}};
  const auto sel_path = path / "selection.json";
  if (!std::filesystem::exists(sel_path)) return p;
  nlohmann::json sel;
  try {
    sel = nlohmann::json::parse(read_file(sel_path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointMismatch, "selection.json: " + std::string(e.what()));
  }
  std::map<int, KdfModel> loaded;
  const nlohmann::json tasks = sel.value("tasks", nlohmann::json::object());
  for (const auto& [name, epoch_json] : tasks.items()) {
    const Task task = task_from_name(name);
    const int epoch = epoch_json.get<int>();
    auto it = loaded.find(epoch);
    if (it == loaded.end())
      it = loaded.emplace(epoch, load_checkpoint(path / ("epoch_" + std::to_string(epoch) + ".ckpt"), &p.model.config)).first;
    if (!(it->second.heads == p.model.heads)) throw Error(ErrorCode::CheckpointMismatch, "epoch checkpoint heads differ from final.ckpt");
    p.selected[task] = it->second.params;
    p.selected_epoch[task] = epoch;
  }
  return p;
}

namespace engine_detail {

inline MetadataAnnotation annotate(const KdfModel& m, const std::map<Task, const ParamSet<float>*>& chosen, const Table& t,
                                   const TableEntities* ents) {
  const TableInputs in = prepare_inputs(t, ents, m.config);
  std::map<const ParamSet<float>*, ForwardPass<float>> passes;
  const auto pass = [&](Task task) -> const ForwardPass<float>& {
    const auto it = chosen.find(task);
    const ParamSet<float>* ps = it == chosen.end() ? &m.params : it->second;
    auto found = passes.find(ps);
    if (found == passes.end()) {
      ForwardOptions opts;
      opts.grad = false;
      found = passes.emplace(ps, forward(*ps, in, m.config, opts)).first;
    }
    return found->second;
  };
  const auto logits = [&](Task task) -> const Mat<float>& {
    const auto& fp = pass(task);
    return fp.value(fp.logits.at(task));
  };
  MetadataAnnotation a;
  a.table_id = t.id;
  a.model = "kdf";
  const auto& md = logits(Task::MsrDim);
  const auto& key = logits(Task::NaturalKey);
  const auto& br = logits(Task::CommonBreakdown);
  const auto& ms = logits(Task::CommonMeasure);
  const auto& mt = logits(Task::MsrType);
  const auto& dt = logits(Task::DimType);
  const auto& ag = logits(Task::Agg);
  for (const Field& f : t.fields) {
    const auto r = static_cast<Eigen::Index>(f.index);
    FieldAnnotation fa;
    fa.index = f.index;
    fa.header = f.header;
    fa.measure_prob = sigmoid(md(r, 0));
    fa.msr_dim = std::string(fa.measure_prob >= 0.5 ? kMeasureLabel : kDimensionLabel);
    fa.role_scores = {sigmoid(key(r, 0)), sigmoid(br(r, 0)), sigmoid(ms(r, 0))};
    if (fa.is_measure()) {
      Eigen::Index best = 0;
      mt.row(r).maxCoeff(&best);
      fa.msr_type = m.heads.msr_types[static_cast<std::size_t>(best)];
      const Mat<double> p = ops::softmax_rows_value(Mat<double>(ag.row(r).cast<double>()));
      std::vector<std::size_t> order(m.heads.agg.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
        return p(0, static_cast<Eigen::Index>(x)) > p(0, static_cast<Eigen::Index>(y));
      });
      for (std::size_t c : order) fa.agg_ranking.push_back({m.heads.agg[c], p(0, static_cast<Eigen::Index>(c))});
    } else {
      Eigen::Index best = 0;
      dt.row(r).maxCoeff(&best);
      fa.dim_type = m.heads.dim_types[static_cast<std::size_t>(best)];
    }
    a.fields.push_back(std::move(fa));
  }
  const auto& pp = pass(Task::MsrPair);
  for (std::size_t k = 0; k < pp.pairs.size(); ++k) {
    const auto [i, j] = pp.pairs[k];
    if (!a.fields[static_cast<std::size_t>(i)].is_measure() || !a.fields[static_cast<std::size_t>(j)].is_measure()) continue;
    a.pairs.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(j),
                       sigmoid(pp.value(pp.pair_logits)(static_cast<Eigen::Index>(k), 0))});
  }
  return a;
}

}  // namespace engine_detail

inline MetadataAnnotation kdf_annotate(const KdfModel& m, const Table& t, const TableEntities* ents = nullptr) {
  return engine_detail::annotate(m, {}, t, ents);
}

inline MetadataAnnotation kdf_annotate(const KdfPredictor& p, const Table& t, const TableEntities* ents = nullptr) {
  std::map<Task, const ParamSet<float>*> chosen;
  for (const auto& [task, ps] : p.selected) chosen[task] = &ps;
  return engine_detail::annotate(p.model, chosen, t, ents);
}

/// Column encoder output, one row per field.
inline Mat<float> column_embeddings(const KdfModel& m, const Table& t, const TableEntities* ents = nullptr) {
  ForwardOptions opts;
  opts.grad = false;
  opts.pairs = std::vector<std::pair<int, int>>{};
  const auto fp = forward(m.params, prepare_inputs(t, ents, m.config), m.config, opts);
  return fp.value(fp.hidden);
}

inline nlohmann::ordered_json embeddings_to_json(const Table& t, const Mat<float>& e) {
  nlohmann::ordered_json j;
  j["table_id"] = t.id;
  j["dim"] = e.cols();
  j["columns"] = nlohmann::ordered_json::array();
  for (const Field& f : t.fields) {
    std::vector<float> v(e.row(static_cast<Eigen::Index>(f.index)).begin(), e.row(static_cast<Eigen::Index>(f.index)).end());
    j["columns"].push_back({{"index", f.index}, {"header", f.header}, {"vector", v}});
  }
  return j;
}

/// "AMEB", u32 rows, u32 cols, then row-major little-endian float32.
inline std::string embeddings_to_binary(const Mat<float>& e) {
  std::string out = "AMEB";
  const auto put32 = [&](std::uint32_t u) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((u >> (8 * b)) & 0xFF));
  };
  put32(static_cast<std::uint32_t>(e.rows()));
  put32(static_cast<std::uint32_t>(e.cols()));
  for (Eigen::Index i = 0; i < e.size(); ++i) put32(std::bit_cast<std::uint32_t>(e.data()[i]));
  return out;
}

}  // namespace anameta::kdf
