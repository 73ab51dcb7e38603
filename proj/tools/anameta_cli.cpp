// anameta: command-line front end for parsing, profiling, annotating,
// labeling, training, benchmarking and exporting.
//
// Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
// Failures print one JSON object {"error", "message"} on stderr.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "anameta/eval_bench.hpp"
#include "anameta/exporters.hpp"
#include "anameta/field_stats.hpp"
#include "anameta/forest_ml.hpp"
#include "anameta/kdf_engine.hpp"
#include "anameta/label_forge.hpp"
#include "anameta/rule_engine.hpp"
#include "anameta/synthetic.hpp"
#include "anameta/table_core.hpp"
#include "anameta/taxonomy.hpp"

namespace fs = std::filesystem;
using namespace anameta;
using ojson = nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitInternal = 4;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config_path;
  std::string format;
  std::string out;
  std::string vocab_dir;
  bool verbose = false;
  ojson config = ojson::object();

  void load() {
    if (config_path.empty()) return;
    try {
      config = ojson::parse(read_file(config_path));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::MalformedInput, "config " + config_path + ": " + e.what());
    }
    if (!config.is_object()) throw Error(ErrorCode::MalformedInput, "config " + config_path + " must hold a JSON object");
  }

  ojson section(const std::string& name) const { return config.contains(name) ? config[name] : ojson::object(); }

  std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
};

void emit(const Globals& g, const std::string& content) {
  if (g.out.empty()) {
    std::cout << content << std::flush;
    return;
  }
  std::ofstream o(g.out, std::ios::binary);
  o << content;
  if (!o) throw Error(ErrorCode::Io, "cannot write " + g.out);
}

void write_file(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream o(p, std::ios::binary);
  o << content;
  if (!o) throw Error(ErrorCode::Io, "cannot write " + p.string());
}

Vocabularies vocabularies(const Globals& g) {
  VocabularyPaths p;
  const ojson v = g.section("vocab");
  const auto set = [&](std::optional<fs::path>& slot, const char* key, const char* file) {
    if (v.contains(key)) slot = v[key].get<std::string>();
    else if (!g.vocab_dir.empty()) slot = fs::path(g.vocab_dir) / file;
  };
  set(p.measure_types, "measure_types", "measure_types.json");
  set(p.dimension_types, "dimension_types", "dimension_types.txt");
  set(p.agg_functions, "agg_functions", "agg_functions.txt");
  set(p.property_map, "property_map", "property_map.json");
  if (!p.measure_types && !p.dimension_types && !p.agg_functions && !p.property_map) return Vocabularies::builtin();
  return load_vocabularies(p);
}

bool is_table_file(const fs::path& p) {
  const std::string ext = p.extension().string();
  return ext == ".csv" || ext == ".tsv" || ext == ".tab" || ext == ".json";
}

std::vector<Table> load_tables(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_table_file(e.path())) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<Table> tables;
  for (const auto& f : files) tables.push_back(load_table(f));
  if (tables.empty()) throw Error(ErrorCode::EmptyEvaluation, "no table files under " + dir);
  return tables;
}

std::vector<LabeledExample> load_labels(const std::string& path) { return examples_from_jsonl(read_file(path)); }

std::vector<TypeSidecar> load_sidecars(const std::string& path) {
  std::vector<TypeSidecar> out;
  for_each_json_line(read_file(path), [&](const nlohmann::json& j) { out.push_back(sidecar_from_json(j)); });
  return out;
}

kdf::KdfConfig kdf_config(const Globals& g) {
  kdf::KdfConfig c = kdf::config_from_json(g.section("kdf"));
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

ForestConfig forest_config(const Globals& g) {
  ForestConfig c = ForestConfig::from_json(g.section("forest"));
  if (g.seed) c.seed = *g.seed;
  return c;
}

/// Pairs each labeled example with its table, optionally restricted to one split.
void pair_up(const std::vector<Table>& tables, const std::vector<LabeledExample>& labels, std::optional<Split> split,
             std::vector<const Table*>& ts, std::vector<const LabeledExample*>& ls) {
  std::map<std::string, const Table*> by_id;
  for (const Table& t : tables) by_id[t.id] = &t;
  for (const LabeledExample& e : labels) {
    if (split && e.split != *split) continue;
    const auto it = by_id.find(e.table_id);
    if (it == by_id.end()) throw Error(ErrorCode::MalformedInput, "labels reference unknown table '" + e.table_id + "'");
    ts.push_back(it->second);
    ls.push_back(&e);
  }
}

bool any_split(const std::vector<LabeledExample>& labels) {
  return std::any_of(labels.begin(), labels.end(), [](const auto& e) { return e.split != Split::Unassigned; });
}

// ---------- model selection for annotate and the exporters ----------

struct ModelArgs {
  std::string model = "rules";
  std::string model_file;
  std::string entities;
  bool units = false;
  std::string annotation;  // exporters: read a saved annotation instead of annotating
};

void add_model_options(CLI::App* c, ModelArgs& m, bool accept_annotation) {
  c->add_option("--model", m.model, "rules, forest or kdf")->check(CLI::IsMember({"rules", "forest", "kdf"}));
  c->add_option("--model-file", m.model_file, "forest bundle JSON, or KDF checkpoint / model directory");
  c->add_option("--entities", m.entities, "entity embeddings JSONL for KDF knowledge fusion");
  c->add_flag("--units", m.units, "rules: measure type from unit lookup");
  if (accept_annotation) c->add_option("--annotation", m.annotation, "annotation JSON to export from");
}

using AnnotateFn = std::function<MetadataAnnotation(const Table&)>;

AnnotateFn make_annotator(const ModelArgs& m, const Vocabularies& vocab) {
  if (!m.annotation.empty()) {
    const MetadataAnnotation a = annotation_from_json(ojson::parse(read_file(m.annotation)));
    return [a](const Table& t) {
      if (a.fields.size() != t.fields.size())
        throw Error(ErrorCode::ShapeMismatch, "annotation '" + a.table_id + "' does not fit table '" + t.id + "'");
      return a;
    };
  }
  if (m.model == "rules") {
    RuleOptions o;
    o.unit_types = m.units;
    return [&vocab, o](const Table& t) { return rules_annotate(t, vocab, o); };
  }
  if (m.model_file.empty()) throw UsageError("--model " + m.model + " needs --model-file");
  if (m.model == "forest") {
    auto b = std::make_shared<ForestBundle>(bundle_from_json(nlohmann::json::parse(read_file(m.model_file))));
    return [b, &vocab](const Table& t) { return forest_annotate(*b, t, vocab); };
  }
  auto p = std::make_shared<kdf::KdfPredictor>(kdf::load_predictor(m.model_file));
  kdf::check_heads(p->model, vocab);
  auto ents = std::make_shared<kdf::EntityStore>();
  if (!m.entities.empty()) *ents = kdf::load_entities(m.entities, static_cast<std::size_t>(p->model.config.subtoken.d_ent));
  return [p, ents](const Table& t) { return kdf::kdf_annotate(*p, t, ents->find(t.id)); };
}

std::vector<Task> parse_tasks(const std::vector<std::string>& names) {
  std::vector<Task> out;
  for (const auto& n : names)
    if (!n.empty()) out.push_back(task_from_name(n));
  return out;
}

std::string dump(const ojson& j, const Globals& g) { return (g.format == "jsonl" ? j.dump() : j.dump(2)) + "\n"; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"anameta: table field metadata annotation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "seed for every random choice");
  app.add_option("--config", g.config_path, "JSON config file with vocab, forest, kdf, split, benchmark and synthetic sections");
  app.add_option("--format", g.format, "output format where a command offers several");
  app.add_option("-o,--out", g.out, "write the primary output here instead of stdout");
  app.add_option("--vocab-dir", g.vocab_dir, "directory with measure_types.json, dimension_types.txt, agg_functions.txt, property_map.json");
  app.add_flag("-v,--verbose", g.verbose, "progress on stderr");

  std::function<void()> run;

  // parse
  std::string table_path;
  std::size_t max_rows = 10000;
  auto* parse = app.add_subcommand("parse", "parse a table file and print its canonical JSON (or CSV with --format csv)");
  parse->add_option("table", table_path)->required();
  parse->add_option("--max-rows", max_rows, "keep at most this many rows (0 keeps all)");
  parse->callback([&] {
    run = [&] {
      const Table t = load_table(table_path, max_rows);
      emit(g, g.format == "csv" ? to_csv(t) : dump(table_to_json(t), g));
    };
  });

  // features
  auto* features = app.add_subcommand("features", "per-field statistics and categories");
  features->add_option("table", table_path)->required();
  bool normalized = false;
  features->add_flag("--normalized", normalized, "print the normalized statistics the models consume");
  features->callback([&] {
    run = [&] {
      const Table t = load_table(table_path, max_rows);
      ojson j{{"table_id", t.id}, {"fields", ojson::array()}};
      for (const Field& f : t.fields) {
        const FeatureVector fv = extract_statistics(f);
        j["fields"].push_back({{"index", f.index},
                               {"header", f.header},
                               {"type", field_type_name(f.field_type)},
                               {"statistics", features_to_json(normalized ? normalize_features(fv) : fv)},
                               {"categories", categories_to_json(extract_categories(f))}});
      }
      emit(g, dump(j, g));
    };
  });

  // annotate / export-ids
  std::vector<std::string> table_paths;
  ModelArgs margs;
  const auto annotate_cmd = [&](CLI::App* c) {
    c->add_option("tables", table_paths, "table files")->required();
    add_model_options(c, margs, c->get_name() == "export-ids");
    c->callback([&] {
      run = [&] {
        const Vocabularies vocab = vocabularies(g);
        const AnnotateFn annotate = make_annotator(margs, vocab);
        std::string out;
        for (const std::string& p : table_paths) {
          const ojson j = annotation_to_json(annotate(load_table(p)));
          out += table_paths.size() > 1 || g.format == "jsonl" ? j.dump() + "\n" : j.dump(2) + "\n";
        }
        emit(g, out);
      };
    });
  };
  annotate_cmd(app.add_subcommand("annotate", "annotate tables with all eight metadata tasks"));
  annotate_cmd(app.add_subcommand("export-ids", "metadata IDs: the annotation JSON of each table"));

  // derive-labels
  std::string tables_dir, artifacts_path, sidecars_path, manifest_path;
  bool do_split = false;
  auto* derive = app.add_subcommand("derive-labels", "turn chart/pivot artifacts and type sidecars into labeled examples (JSONL)");
  derive->add_option("--tables", tables_dir, "directory of table files named <table_id>.<ext>")->required();
  derive->add_option("--artifacts", artifacts_path, "artifact JSONL")->required();
  derive->add_option("--sidecars", sidecars_path, "type sidecar JSONL");
  derive->add_flag("--split", do_split, "deduplicate, down-sample and assign train/valid/test by schema");
  derive->add_option("--manifest", manifest_path, "write the split manifest here");
  derive->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      const auto tables = load_tables(tables_dir);
      const auto artifacts = parse_artifacts(read_file(artifacts_path));
      const auto sidecars = sidecars_path.empty() ? std::vector<TypeSidecar>{} : load_sidecars(sidecars_path);
      auto labels = derive_labels(tables, artifacts, sidecars, vocab, g.seed_or(0));
      if (do_split) {
        SplitConfig sc;
        const ojson s = g.section("split");
        if (s.contains("thresholds")) sc.thresholds = s["thresholds"].get<std::map<std::string, std::size_t>>();
        if (s.contains("ratios")) sc.ratios = s["ratios"].get<std::array<std::size_t, 3>>();
        sc.seed = g.seed_or(0);
        SplitResult r = dedup_downsample_split(labels, sc);
        labels = std::move(r.examples);
        if (!manifest_path.empty()) write_file(manifest_path, r.manifest.dump(2) + "\n");
      }
      emit(g, examples_to_jsonl(labels));
    };
  });

  // train-forest
  std::string labels_path;
  auto* tforest = app.add_subcommand("train-forest", "train the per-task random forests (train split when splits are assigned)");
  tforest->add_option("--tables", tables_dir)->required();
  tforest->add_option("--labels", labels_path)->required();
  tforest->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      const auto tables = load_tables(tables_dir);
      const auto labels = load_labels(labels_path);
      std::vector<const Table*> ts;
      std::vector<const LabeledExample*> ls;
      pair_up(tables, labels, any_split(labels) ? std::optional(Split::Train) : std::nullopt, ts, ls);
      if (ts.empty()) throw Error(ErrorCode::EmptyEvaluation, "no training tables");
      emit(g, bundle_to_json(train_forest_bundle(ts, ls, vocab, forest_config(g))).dump() + "\n");
    };
  });

  // train-kdf
  std::string model_dir;
  std::optional<int> epochs;
  bool no_select = false;
  std::string entities_path;
  auto* tkdf = app.add_subcommand("train-kdf", "train the KDF network; writes final.ckpt, selected epochs and history.json");
  tkdf->add_option("--tables", tables_dir)->required();
  tkdf->add_option("--labels", labels_path)->required();
  tkdf->add_option("--model-dir", model_dir, "output directory")->required();
  tkdf->add_option("--epochs", epochs);
  tkdf->add_option("--entities", entities_path, "entity embeddings JSONL");
  tkdf->add_flag("--no-select", no_select, "skip per-task best-epoch selection on the validation split");
  tkdf->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      kdf::KdfConfig cfg = kdf_config(g);
      if (epochs) cfg.training.epochs = *epochs;
      cfg.validate();
      const auto tables = load_tables(tables_dir);
      const auto labels = load_labels(labels_path);
      const bool split = any_split(labels);
      std::vector<const Table*> tt, vt;
      std::vector<const LabeledExample*> tl, vl;
      pair_up(tables, labels, split ? std::optional(Split::Train) : std::nullopt, tt, tl);
      if (split) pair_up(tables, labels, Split::Valid, vt, vl);
      const auto items = [](const auto& ts, const auto& ls) {
        std::vector<kdf::TrainItem> v;
        for (std::size_t i = 0; i < ts.size(); ++i) v.push_back({ts[i], ls[i]});
        return v;
      };
      kdf::EntityStore ents;
      if (!entities_path.empty()) ents = kdf::load_entities(entities_path, static_cast<std::size_t>(cfg.subtoken.d_ent));
      kdf::TrainOptions o;
      o.entities = entities_path.empty() ? nullptr : &ents;
      o.keep_best = !no_select && !vt.empty();
      if (g.verbose)
        o.on_epoch = [](const kdf::EpochRecord& r) {
          std::cerr << "epoch " << r.epoch << " train_loss " << r.train_loss << "\n";
        };
      kdf::KdfModel model = kdf::make_model(cfg, kdf::head_labels(vocab));
      const auto result = kdf::train(model, items(tt, tl), items(vt, vl), o);
      const kdf::KdfPredictor p = o.keep_best ? kdf::select_best_epochs(std::move(model), result)
                                              : kdf::KdfPredictor{std::move(model), {}, {}};
      kdf::save_predictor(p, model_dir);
      const std::string history = kdf::history_to_json(result).dump(2) + "\n";
      write_file(fs::path(model_dir) / "history.json", history);
      emit(g, history);
    };
  });

  // evaluate
  std::vector<std::string> models;
  std::string reference, report_path, markdown_path;
  std::optional<std::size_t> runs;
  std::vector<std::size_t> extra_k;
  bool timing = false;
  auto* evaluate = app.add_subcommand("evaluate", "benchmark models: train on the train split, score the test split");
  evaluate->add_option("--tables", tables_dir)->required();
  evaluate->add_option("--labels", labels_path, "labeled examples with splits assigned")->required();
  evaluate->add_option("--models", models, "subset of rules, forest, kdf")->delimiter(',');
  evaluate->add_option("--reference", reference, "model the delta columns compare against");
  evaluate->add_option("--runs", runs, "average metrics over this many seeds");
  evaluate->add_option("--hr-k", extra_k, "additional HR@k cutoffs")->delimiter(',');
  evaluate->add_flag("--timing", timing, "report training seconds");
  evaluate->add_option("--entities", entities_path, "entity embeddings JSONL for KDF");
  evaluate->add_option("--report", report_path, "also write the JSON report here");
  evaluate->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      BenchmarkConfig cfg = benchmark_config_from_json(g.section("benchmark"));
      if (g.config.contains("forest")) cfg.forest = forest_config(g);
      if (g.config.contains("kdf")) cfg.kdf = kdf_config(g);
      if (g.seed) cfg.seed = *g.seed;
      if (!models.empty()) cfg.models = models;
      if (!reference.empty()) cfg.reference = reference;
      else if (std::find(cfg.models.begin(), cfg.models.end(), cfg.reference) == cfg.models.end()) cfg.reference = cfg.models.front();
      if (runs) cfg.runs = *runs;
      if (!extra_k.empty()) cfg.extra_k = extra_k;
      cfg.timing = cfg.timing || timing;
      const auto tables = load_tables(tables_dir);
      const auto labels = load_labels(labels_path);
      kdf::EntityStore ents;
      if (!entities_path.empty()) ents = kdf::load_entities(entities_path, static_cast<std::size_t>(cfg.kdf.subtoken.d_ent));
      const MetricReport rep = run_benchmark(tables, labels, cfg, builtin_models(vocab, cfg, entities_path.empty() ? nullptr : &ents));
      const ojson j = report_to_json(rep);
      if (!report_path.empty()) write_file(report_path, j.dump(2) + "\n");
      emit(g, g.format == "json" ? j.dump(2) + "\n" : report_to_markdown(rep));
    };
  });

  // export-sentences
  ModelArgs sargs;
  auto* sentences = app.add_subcommand("export-sentences", "metadata sentences: each header followed by bracketed tags");
  sentences->add_option("table", table_path)->required();
  add_model_options(sentences, sargs, true);
  sentences->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      const Table t = load_table(table_path, max_rows);
      emit(g, export_sentences(make_annotator(sargs, vocab)(t), t));
    };
  });

  // export-qa
  ModelArgs qargs;
  std::vector<std::string> tasks;
  QaOptions qa_opts;
  std::string qa_labels;
  auto* qa = app.add_subcommand("export-qa", "question/answer prompts over the markdown table, one JSON object per line");
  qa->add_option("table", table_path)->required();
  qa->add_option("--tasks", tasks, "comma separated task names; empty emits nothing")->delimiter(',');
  qa->add_option("--labels", qa_labels, "take answers from a labeled-examples JSONL instead of an annotation");
  qa->add_flag("--definitions", qa_opts.definitions, "include term definitions in the questions");
  qa->add_option("--max-rows", qa_opts.max_rows, "rows rendered into the prompt (0 keeps all)");
  add_model_options(qa, qargs, true);
  qa->callback([&] {
    run = [&] {
      const Vocabularies vocab = vocabularies(g);
      const std::vector<Task> task_list = parse_tasks(tasks);
      const Table t = load_table(table_path, max_rows);
      QaFacts facts;
      if (!qa_labels.empty()) {
        const auto labels = load_labels(qa_labels);
        const auto it = std::find_if(labels.begin(), labels.end(), [&](const auto& e) { return e.table_id == t.id; });
        if (it == labels.end()) throw Error(ErrorCode::MalformedInput, "no labels for table '" + t.id + "'");
        if (it->n_fields != t.fields.size()) throw Error(ErrorCode::ShapeMismatch, "labels do not fit table '" + t.id + "'");
        facts = facts_from_labels(*it, vocab);
      } else if (!task_list.empty()) {
        facts = facts_from_annotation(make_annotator(qargs, vocab)(t));
      }
      emit(g, qa_to_jsonl(export_qa_pairs(t, facts, task_list, vocab, qa_opts)));
    };
  });

  // export-embeddings
  std::string checkpoint;
  auto* emb = app.add_subcommand("export-embeddings", "column embeddings from the KDF column encoder (--format json|binary)");
  emb->add_option("table", table_path)->required();
  emb->add_option("--checkpoint", checkpoint, "KDF checkpoint file or model directory")->required();
  emb->add_option("--entities", entities_path, "entity embeddings JSONL");
  emb->callback([&] {
    run = [&] {
      const Table t = load_table(table_path, max_rows);
      const kdf::KdfModel m = kdf::load_predictor(checkpoint).model;
      kdf::EntityStore ents;
      if (!entities_path.empty()) ents = kdf::load_entities(entities_path, static_cast<std::size_t>(m.config.subtoken.d_ent));
      const auto e = kdf::column_embeddings(m, t, ents.find(t.id));
      if (g.format == "binary") {
        if (g.out.empty()) throw UsageError("--format binary needs --out");
        ojson side = kdf::embeddings_to_json(t, e);
        for (auto& c : side["columns"]) c.erase("vector");
        side["rows"] = e.rows();
        side["encoding"] = "AMEB u32 rows, u32 cols, float32 little-endian row-major";
        write_file(g.out, kdf::embeddings_to_binary(e));
        write_file(g.out + ".json", side.dump(2) + "\n");
        return;
      }
      emit(g, kdf::embeddings_to_json(t, e).dump() + "\n");
    };
  });

  // gen-corpus
  std::string corpus_dir;
  SyntheticConfig sc;
  auto* gen = app.add_subcommand("gen-corpus", "write a synthetic corpus: tables/, artifacts.jsonl, sidecars.jsonl");
  gen->add_option("--dir", corpus_dir, "output directory")->required();
  gen->add_option("--tables", sc.tables);
  gen->callback([&] {
    run = [&] {
      const ojson s = g.section("synthetic");
      sc.min_rows = s.value("min_rows", sc.min_rows);
      sc.max_rows = s.value("max_rows", sc.max_rows);
      sc.rank_probability = s.value("rank_probability", sc.rank_probability);
      sc.year_probability = s.value("year_probability", sc.year_probability);
      sc.seed = g.seed_or(s.value("seed", sc.seed));
      write_corpus(generate_corpus(sc), corpus_dir);
    };
  });

  const auto fail = [](int code, std::string_view kind, const std::string& msg) {
    std::cerr << ojson{{"error", kind}, {"message", msg}}.dump() << "\n";
    return code;
  };

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    return fail(kExitUsage, "Usage", e.what());
  }

  try {
    g.load();
    if (run) run();
    return 0;
  } catch (const UsageError& e) {
    return fail(kExitUsage, "Usage", e.what());
  } catch (const Error& e) {
    return fail(kExitData, error_code_name(e.code()), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(kExitData, "MalformedInput", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitData, "Io", e.what());
  } catch (const std::exception& e) {
    return fail(kExitInternal, "Internal", e.what());
  }
}
