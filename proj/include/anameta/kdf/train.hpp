#pragma once

#include <bit>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anameta/kdf/model.hpp"
#include "anameta/label_forge.hpp"

namespace anameta::kdf {

struct KdfModel {
  KdfConfig config;
  HeadLabels heads;
  ParamSet<float> params;
  int epoch = 0;          // completed training epochs
  std::uint64_t step = 0;  // optimizer steps taken
};

inline KdfModel make_model(const KdfConfig& cfg, const HeadLabels& heads) {
  return {cfg, heads, init_parameters(cfg, heads), 0, 0};
}

// ---------- optimizer ----------

/// Adam with decoupled weight decay: p ← p − lr·wd·p − lr·m̂/(√v̂ + ε).
class AdamW {
 public:
  explicit AdamW(const TrainingConfig& c) : cfg_(c) {}

  void step(ParamSet<float>& p, float grad_scale, std::uint64_t& t) {
    ++t;
    const double b1t = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t));
    const double b2t = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t));
    const auto lr = static_cast<float>(cfg_.lr);
    const auto wd = static_cast<float>(cfg_.lr * cfg_.weight_decay);
    const auto b1 = static_cast<float>(cfg_.beta1), b2 = static_cast<float>(cfg_.beta2);
    const auto eps = static_cast<float>(cfg_.adam_eps);
    for (const std::string& name : p.order) {
      Mat<float>& w = p.values.at(name);
      const Mat<float> g = p.grads.at(name) * grad_scale;
      auto [it, fresh] = m_.try_emplace(name);
      if (fresh) {
        it->second = Mat<float>::Zero(w.rows(), w.cols());
        v_[name] = Mat<float>::Zero(w.rows(), w.cols());
      }
      Mat<float>& m = it->second;
      Mat<float>& v = v_.at(name);
      m = b1 * m + (1.0f - b1) * g;
      v = b2 * v + (1.0f - b2) * g.cwiseProduct(g);
      if (lr == 0.0f) continue;
      w -= wd * w;
      w.array() -= lr * (m.array() / static_cast<float>(b1t)) /
                   ((v.array() / static_cast<float>(b2t)).sqrt() + eps);
    }
  }

 private:
  TrainingConfig cfg_;
  std::map<std::string, Mat<float>> m_, v_;
};

// ---------- checkpoints ----------

inline constexpr std::string_view kCheckpointFormat = "anameta.kdf.v1";

/// Text header line, one JSON header line, then little-endian float32 tensors
/// in header order.
inline void save_checkpoint(const KdfModel& model, const std::filesystem::path& path) {
  nlohmann::ordered_json h;
  h["format"] = kCheckpointFormat;
  h["config"] = config_to_json(model.config);
  h["heads"] = {{"msr_types", model.heads.msr_types}, {"dim_types", model.heads.dim_types}, {"agg", model.heads.agg}};
  h["epoch"] = model.epoch;
  h["step"] = model.step;
  // Every random draw during training derives from the seed and the epoch.
  h["rng"] = {{"seed", model.config.seed}, {"next_epoch", model.epoch}};
  h["tensors"] = nlohmann::ordered_json::array();
  for (const std::string& name : model.params.order) {
    const Mat<float>& v = model.params.at(name);
    h["tensors"].push_back({{"name", name}, {"rows", v.rows()}, {"cols", v.cols()}});
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  out << kCheckpointFormat << '\n' << h.dump() << '\n';
  std::string buf;
  for (const std::string& name : model.params.order) {
    const Mat<float>& v = model.params.at(name);
    buf.resize(static_cast<std::size_t>(v.size()) * 4);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const auto u = std::bit_cast<std::uint32_t>(v.data()[i]);
      for (int b = 0; b < 4; ++b) buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)] = static_cast<char>((u >> (8 * b)) & 0xFF);
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw Error(ErrorCode::Io, "short write to " + path.string());
}

/// Rejects files of another format, truncated files, and tensors whose
/// shapes disagree with the stored config; `expect` additionally pins the config.
inline KdfModel load_checkpoint(const std::filesystem::path& path, const KdfConfig* expect = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + path.string());
  std::string magic, header;
  std::getline(in, magic);
  if (magic != kCheckpointFormat) throw Error(ErrorCode::CheckpointMismatch, path.string() + " is not a " + std::string(kCheckpointFormat) + " checkpoint");
  std::getline(in, header);
  KdfModel m;
  nlohmann::ordered_json h;
  try {
    h = nlohmann::ordered_json::parse(header);
    m.config = config_from_json(h.at("config"));
    const auto& hd = h.at("heads");
    m.heads = {hd.at("msr_types").get<std::vector<std::string>>(), hd.at("dim_types").get<std::vector<std::string>>(),
               hd.at("agg").get<std::vector<std::string>>()};
    m.epoch = h.at("epoch").get<int>();
    m.step = h.at("step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::CheckpointMismatch, "checkpoint header: " + std::string(e.what()));
  } catch (const Error& e) {
    throw Error(ErrorCode::CheckpointMismatch, e.what());
  }
  if (expect && !(*expect == m.config))
    throw Error(ErrorCode::CheckpointMismatch, "checkpoint config differs from the requested config");
  const auto shapes = parameter_shapes(m.config, m.heads);
  const auto& tensors = h.at("tensors");
  if (tensors.size() != shapes.size()) throw Error(ErrorCode::CheckpointMismatch, "checkpoint holds a different parameter set");
  std::string buf;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const auto& tj = tensors[k];
    const auto& [name, shape] = shapes[k];
    if (tj.at("name").get<std::string>() != name || tj.at("rows").get<int>() != shape.first || tj.at("cols").get<int>() != shape.second)
      throw Error(ErrorCode::CheckpointMismatch, "tensor " + tj.at("name").get<std::string>() + " does not match " + name);
    Mat<float> v(shape.first, shape.second);
    buf.resize(static_cast<std::size_t>(v.size()) * 4);
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size())) throw Error(ErrorCode::CheckpointMismatch, "checkpoint is truncated");
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[static_cast<std::size_t>(i) * 4 + static_cast<std::size_t>(b)])) << (8 * b);
      v.data()[i] = std::bit_cast<float>(u);
    }
    m.params.add(name, std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw Error(ErrorCode::CheckpointMismatch, "trailing bytes after the last tensor");
  return m;
}

// ---------- training ----------

struct TrainItem {
  const Table* table = nullptr;
  const LabeledExample* labels = nullptr;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;               // mean per-table loss over the epoch
  std::size_t tables = 0;
  std::map<std::string, double> valid;   // task name → accuracy or HR@1, plus "loss"
};

struct TrainOptions {
  const EntityStore* entities = nullptr;
  std::optional<std::filesystem::path> checkpoint_dir;  // one checkpoint per epoch
  std::function<void(const EpochRecord&)> on_epoch;
  bool keep_best = false;  // retain the parameters of every metric's best epoch
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::map<std::string, int> best_epoch;  // per validation metric, first epoch on ties
  std::map<std::string, ParamSet<float>> best_params;  // with TrainOptions::keep_best
};

namespace train_detail {

struct Prepared {
  const Table* table;
  const LabeledExample* labels;
  TableInputs inputs;
  KdfTargets targets;
};

inline bool has_any(const KdfTargets& y) {
  return !(y.msr_dim.empty() && y.natural_key.empty() && y.common_breakdown.empty() && y.common_measure.empty() &&
           y.pairs.empty() && y.msr_type.empty() && y.dim_type.empty() && y.agg.empty());
}

inline std::vector<Prepared> prepare(const std::vector<TrainItem>& items, const KdfModel& m, const EntityStore* ents) {
  std::vector<Prepared> out;
  for (const TrainItem& it : items) {
    KdfTargets y = targets_from_example(*it.labels, m.heads);
    if (!has_any(y)) continue;
    out.push_back({it.table, it.labels, prepare_inputs(*it.table, ents ? ents->find(it.table->id) : nullptr, m.config), std::move(y)});
  }
  return out;
}

inline std::string describe_losses(const ForwardPass<float>& fp) {
  std::string s;
  for (const auto& [task, id] : fp.task_loss)
    s += (s.empty() ? "" : ", ") + std::string(task_name(task)) + "=" + std::to_string(fp.value(id)(0, 0));
  return s;
}

/// Validation metrics straight from logits: accuracy for classification
/// tasks, HR@1 for the three ranking tasks.
inline std::map<std::string, double> validate(const KdfModel& m, const std::vector<Prepared>& set) {
  std::map<std::string, std::pair<double, double>> acc;  // hits, total
  double loss = 0.0;
  for (const Prepared& p : set) {
    ForwardOptions opts;
    opts.targets = &p.targets;
    opts.grad = false;
    const auto fp = forward(m.params, p.inputs, m.config, opts);
    if (fp.loss >= 0) loss += fp.value(fp.loss)(0, 0);
    const auto& md = fp.value(fp.logits.at(Task::MsrDim));
    for (std::size_t k = 0; k < p.targets.msr_dim.rows.size(); ++k) {
      auto& a = acc["msr_dim"];
      a.first += ((md(p.targets.msr_dim.rows[k], 0) >= 0.0f) == (p.targets.msr_dim.y[k] == 1.0)) ? 1 : 0;
      a.second += 1;
    }
    for (Task role : {Task::NaturalKey, Task::CommonBreakdown, Task::CommonMeasure}) {
      const BinaryTargets& b = role == Task::NaturalKey ? p.targets.natural_key
                               : role == Task::CommonBreakdown ? p.targets.common_breakdown
                                                               : p.targets.common_measure;
      bool any_pos = false;
      for (double y : b.y) any_pos = any_pos || y == 1.0;
      if (!any_pos) continue;
      const auto& z = fp.value(fp.logits.at(role));
      Eigen::Index top = 0;
      for (Eigen::Index i = 1; i < z.rows(); ++i)
        if (z(i, 0) > z(top, 0)) top = i;
      bool hit = false;
      for (std::size_t k = 0; k < b.rows.size(); ++k) hit = hit || (b.rows[k] == top && b.y[k] == 1.0);
      auto& a = acc[std::string(task_name(role))];
      a.first += hit ? 1 : 0;
      a.second += 1;
    }
    for (std::size_t k = 0; k < p.targets.pairs.size(); ++k) {
      auto& a = acc["msr_pair"];
      a.first += ((fp.value(fp.pair_logits)(static_cast<Eigen::Index>(k), 0) >= 0.0f) == (p.targets.pair_y[k] == 1.0)) ? 1 : 0;
      a.second += 1;
    }
    for (Task task : {Task::MsrType, Task::DimType, Task::Agg}) {
      const ClassTargets& c = task == Task::MsrType ? p.targets.msr_type : task == Task::DimType ? p.targets.dim_type : p.targets.agg;
      const auto& z = fp.value(fp.logits.at(task));
      for (std::size_t k = 0; k < c.rows.size(); ++k) {
        Eigen::Index best = 0;
        z.row(c.rows[k]).maxCoeff(&best);
        auto& a = acc[std::string(task_name(task))];
        a.first += std::find(c.gold[k].begin(), c.gold[k].end(), static_cast<int>(best)) != c.gold[k].end() ? 1 : 0;
        a.second += 1;
      }
    }
  }
  std::map<std::string, double> out;
  for (const auto& [name, a] : acc) out[name] = a.first / a.second;
  if (!set.empty()) out["loss"] = loss / static_cast<double>(set.size());
  return out;
}

}  // namespace train_detail

/// Mini-batch training: gradients are summed over `batch` tables, averaged,
/// and applied with AdamW. Table order is reshuffled every epoch from the seed.
inline TrainResult train(KdfModel& model, const std::vector<TrainItem>& train_set, const std::vector<TrainItem>& valid_set,
                         const TrainOptions& opts = {}) {
  model.config.validate();
  const auto train_data = train_detail::prepare(train_set, model, opts.entities);
  if (train_data.empty()) throw Error(ErrorCode::EmptyEvaluation, "training split has no labeled tables");
  const auto valid_data = train_detail::prepare(valid_set, model, opts.entities);
  if (opts.checkpoint_dir) std::filesystem::create_directories(*opts.checkpoint_dir);
  AdamW opt(model.config.training);
  TrainResult result;
  const auto batch = static_cast<std::size_t>(model.config.training.batch);
  for (int e = 0; e < model.config.training.epochs; ++e) {
    const int epoch = model.epoch + 1;
    std::vector<std::size_t> order(train_data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(Rng::mix(model.config.seed, 1000 + static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      model.params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& p = train_data[order[k]];
        ForwardOptions fo;
        fo.targets = &p.targets;
        auto fp = forward(model.params, p.inputs, model.config, fo);
        const float loss = fp.value(fp.loss)(0, 0);
        if (!std::isfinite(loss))
          throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + ", table " + p.table->id +
                                                    ": " + train_detail::describe_losses(fp));
        fp.tape.backward(fp.loss);
        rec.train_loss += loss;
        ++rec.tables;
      }
      opt.step(model.params, 1.0f / static_cast<float>(end - start), model.step);
    }
    rec.train_loss /= static_cast<double>(rec.tables);
    model.epoch = epoch;
    rec.valid = train_detail::validate(model, valid_data);
    for (const auto& [name, v] : rec.valid) {
      if (name == "loss") continue;
      const auto it = result.best_epoch.find(name);
      bool improved = it == result.best_epoch.end();
      if (!improved) {
        const auto& prev = result.history[static_cast<std::size_t>(it->second - result.history.front().epoch)].valid;
        const auto pv = prev.find(name);
        improved = pv == prev.end() || v > pv->second;
      }
      if (!improved) continue;
      result.best_epoch[name] = epoch;
      if (opts.keep_best) result.best_params[name] = model.params;
    }
    if (opts.checkpoint_dir) save_checkpoint(model, *opts.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
    result.history.push_back(rec);
    if (opts.on_epoch) opts.on_epoch(rec);
  }
  return result;
}

inline nlohmann::ordered_json history_to_json(const TrainResult& r) {
  nlohmann::ordered_json j;
  j["epochs"] = nlohmann::ordered_json::array();
  for (const EpochRecord& e : r.history) {
    nlohmann::ordered_json ej{{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"tables", e.tables}};
    ej["valid"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : e.valid) ej["valid"][k] = v;
    j["epochs"].push_back(std::move(ej));
  }
  j["best_epoch"] = nlohmann::ordered_json::object();
  for (const auto& [k, v] : r.best_epoch) j["best_epoch"][k] = v;
  return j;
}

}  // namespace anameta::kdf
