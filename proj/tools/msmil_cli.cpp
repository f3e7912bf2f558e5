#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "config_file.hpp"
#include "msmil/aggregate.hpp"
#include "msmil/binary_io.hpp"
#include "msmil/classify.hpp"
#include "msmil/codebook.hpp"
#include "msmil/error.hpp"
#include "msmil/features.hpp"
#include "msmil/harness.hpp"
#include "msmil/slide.hpp"
#include "run_manifest.hpp"

using namespace msmil;
using namespace msmil::cli;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitNumerical = 4;

struct Globals {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  std::string config;
  std::string out;
};

// Overrides shared by the stage and experiment subcommands.
struct Overrides {
  std::optional<std::string> method;
  std::optional<std::size_t> k;
  std::optional<std::string> classifier;
  std::optional<double> C;
  std::optional<double> gamma;
  std::optional<std::size_t> reps;
  std::optional<std::size_t> np;
  std::optional<double> train_fraction;
  std::optional<bool> aug1;
};

Settings resolve_settings(const Globals& g, const Overrides& o) {
  Settings s;
  if (!g.config.empty()) apply_config_file(g.config, s);
  auto set = [&](const char* key, const auto& opt) {
    if (!opt) return;
    std::ostringstream v;
    v.precision(17);
    if constexpr (std::is_same_v<std::decay_t<decltype(*opt)>, bool>) v << (*opt ? "true" : "false");
    else v << *opt;
    apply_setting(s, key, v.str());
  };
  set("seed", g.seed);
  set("threads", g.threads);
  set("method", o.method);
  set("k", o.k);
  set("classifier", o.classifier);
  set("C", o.C);
  set("rbf_gamma", o.gamma);
  set("repetitions", o.reps);
  set("np", o.np);
  set("train_fraction", o.train_fraction);
  set("aug1", o.aug1);
  validate_config(s.experiment);
  return s;
}

std::string require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required for this subcommand");
  return g.out;
}

RunManifest start_manifest(const std::string& command, int argc, char** argv, const Globals& g,
                           std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  for (int i = 1; i < argc; ++i) m.arguments.emplace_back(argv[i]);
  m.config_path = g.config;
  m.seed = seed;
  m.started_at = utc_timestamp();
  return m;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw DataError("cannot write '" + path + "'");
}

std::ifstream open_input(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot read '" + path + "'");
  return f;
}

// Per-slide sampling seed: independent of argument order.
std::uint64_t slide_seed(std::uint64_t master, const std::string& slide_id) {
  return derive_seed(master, stable_hash64(slide_id));
}

std::vector<std::string> codebook_paths(const std::string& base, Method method) {
  if (method != Method::kMM) return {base};
  return {base + ".s1", base + ".s2", base + ".s4"};
}

// Bags of one repetition's split side, in dataset order.
std::vector<FeatureBag> select_side(const std::vector<FeatureBag>& bags, const ExperimentConfig& c,
                                    std::uint64_t rep_seed, const std::string& side) {
  if (side == "all") return bags;
  Rng rng(stream_seed(rep_seed, SeedStream::kSplit));
  const Split split = stratified_split(bags, c.train_fraction, rng);
  const auto& idx = side == "train" ? split.train : split.test;
  std::vector<FeatureBag> out;
  for (std::size_t i : idx) out.push_back(bags[i]);
  return out;
}

std::vector<FeatureBag> limit_patches(std::vector<FeatureBag> bags, std::size_t np) {
  for (FeatureBag& b : bags) {
    if (b.n_patches() < np)
      throw SizeError("bag '" + b.slide_id + "' has " + std::to_string(b.n_patches()) +
                      " patches, np = " + std::to_string(np));
    if (b.n_patches() > np) {
      std::vector<std::size_t> rows(np);
      for (std::size_t i = 0; i < np; ++i) rows[i] = i;
      b = b.subset(rows);
    }
  }
  return bags;
}

SyntheticSpec preset_spec(const Settings& s, std::uint64_t seed) {
  const std::string name = s.preset.value_or("scale1-signal");
  auto spec = synthetic_preset(name, seed);
  if (!spec) throw ConfigError("unknown synthetic preset '" + name + "'");
  spec->slides_per_class = s.slides_per_class;
  spec->n_patches = s.experiment.n_patches;
  validate_spec(*spec);
  return *spec;
}

std::string keys_help() {
  std::string text = "Config file: one `key = value` per line, '#' comments. Keys:\n ";
  for (const auto& k : config_keys()) text += " " + k;
  text +=
      "\nExit codes: 0 success, 2 usage, 3 data or format, 4 numerical failure.";
  return text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-scale multiple-instance slide classification pipeline", "msmil"};
  app.require_subcommand(1);
  app.fallthrough();
  app.footer(keys_help());

  Globals g;
  app.add_option("--seed", g.seed, "Master seed; all randomness derives from it");
  app.add_option("--threads", g.threads, "Maximum worker threads")->check(CLI::PositiveNumber);
  app.add_option("--config", g.config, "Flat key = value config file");
  app.add_option("--out", g.out, "Output file");

  Overrides o;
  auto add_model_flags = [&](CLI::App* c) {
    c->add_option("--method", o.method, "baseline, MC, MA or MM");
    c->add_option("--k", o.k, "Codebook size");
  };
  auto add_classifier_flags = [&](CLI::App* c) {
    c->add_option("--classifier", o.classifier, "linear, rbf or optimized");
    c->add_option("--C", o.C, "SVM cost for linear and rbf");
    c->add_option("--gamma", o.gamma, "RBF gamma");
  };
  std::size_t rep = 0;
  std::string side = "all";
  auto add_split_flags = [&](CLI::App* c) {
    c->add_option("--rep", rep, "Repetition whose seeds and split are used");
    c->add_option("--side", side, "Split side to use")->check(CLI::IsMember({"all", "train", "test"}));
    c->add_option("--train-fraction", o.train_fraction, "Training share per class");
  };

  // sample
  auto* sample = app.add_subcommand("sample", "Sample multi-scale patch triples from slides");
  std::vector<std::string> slide_files;
  std::string dump_dir;
  std::size_t max_attempts = 0;
  sample->add_option("slides", slide_files, "Slide rasters (PNG or TIFF)")->required();
  sample->add_option("--np", o.np, "Patches per slide");
  sample->add_option("--dump-dir", dump_dir, "Also write every patch as PNG here");
  sample->add_option("--max-attempts", max_attempts, "Rejections before giving up (0: 1000 x np)");

  // featurize
  auto* featurize = app.add_subcommand("featurize", "Embed sampled patches into a feature cache");
  std::vector<std::string> fn_files, pc_files;
  std::string model_file, manifest_file;
  featurize->add_option("--fn", fn_files, "Slides labelled FN");
  featurize->add_option("--pc", pc_files, "Slides labelled PC");
  featurize->add_option("--model", model_file, "ONNX feature extractor (default: test backend)");
  featurize->add_option("--manifest", manifest_file, "Bag manifest from `sample` to reuse");
  featurize->add_option("--np", o.np, "Patches per slide when sampling");
  featurize->add_option("--max-attempts", max_attempts, "Rejections before giving up (0: 1000 x np)");

  // synth
  auto* synth = app.add_subcommand("synth", "Write a synthetic feature cache");
  std::optional<std::string> preset;
  std::optional<std::size_t> slides_per_class;
  synth->add_option("--preset", preset, "scale1-signal, all-noise, probe-mc or probe-mm");
  synth->add_option("--slides-per-class", slides_per_class, "Slides per class");
  synth->add_option("--np", o.np, "Patches per slide");

  // fit-codebook
  auto* fit = app.add_subcommand("fit-codebook", "Fit the k-means codebook(s) of a method");
  std::string cache_file;
  fit->add_option("--cache", cache_file, "Feature cache")->required();
  add_model_flags(fit);
  add_split_flags(fit);

  // aggregate
  auto* aggregate = app.add_subcommand("aggregate", "Encode bags as bag-of-words histograms");
  std::string codebook_file;
  aggregate->add_option("--cache", cache_file, "Feature cache")->required();
  aggregate->add_option("--codebook", codebook_file, "Codebook file (MM: base of .s1/.s2/.s4)")->required();
  add_model_flags(aggregate);
  add_split_flags(aggregate);
  bool aggregate_aug1 = false;
  aggregate->add_flag("--aug1", aggregate_aug1, "Append 8 Aug1 histograms per slide");

  // train
  auto* train = app.add_subcommand("train", "Train an SVM on histogram rows");
  std::string hist_file, grid_out;
  train->add_option("--histograms", hist_file, "Histogram CSV")->required();
  train->add_option("--rep", rep, "Repetition whose inner-CV seed is used");
  train->add_option("--grid-out", grid_out, "Grid-search report CSV (optimized only)");
  add_classifier_flags(train);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Classify histogram rows and report accuracy");
  evaluate->add_option("--model", model_file, "Model file")->required();
  evaluate->add_option("--histograms", hist_file, "Histogram CSV")->required();

  // experiment
  auto* experiment = app.add_subcommand("experiment", "Repeated stratified holdout experiment");
  std::string reps_out;
  std::optional<std::string> exp_cache;
  bool resample_flag = false;
  experiment->add_option("--cache", exp_cache, "Feature cache");
  experiment->add_option("--preset", preset, "Synthetic preset used when no cache is given");
  experiment->add_option("--slides-per-class", slides_per_class, "Synthetic slides per class");
  experiment->add_flag("--resample", resample_flag, "Draw a fresh synthetic dataset per repetition");
  experiment->add_option("--reps", o.reps, "Repetitions");
  experiment->add_option("--np", o.np, "Patches per slide");
  experiment->add_option("--repetitions-out", reps_out, "Per-repetition CSV");
  experiment->add_option("--aug1", o.aug1, "Aug1 on training slides (true or false)");
  add_model_flags(experiment);
  add_classifier_flags(experiment);

  // report
  auto* report = app.add_subcommand("report", "Combine result CSVs into a CSV and an SVG chart");
  std::vector<std::string> result_files;
  std::optional<double> baseline;
  std::string csv_out;
  report->add_option("results", result_files, "Result CSVs")->required();
  report->add_option("--baseline", baseline, "Horizontal baseline rule value");
  report->add_option("--csv", csv_out, "Combined results CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (sample->parsed()) {
      const Settings s = resolve_settings(g, o);
      const std::size_t np = s.experiment.n_patches;
      RunManifest m = start_manifest("sample", argc, argv, g, s.experiment.seed);
      std::ostringstream manifest;
      write_bag_manifest_header(manifest);
      for (const std::string& file : slide_files) {
        const SlideImage slide = load_slide(file);
        Rng rng(slide_seed(s.experiment.seed, slide.id()));
        const auto triples = sample_bag(slide, np, rng, max_attempts);
        write_bag_manifest_rows(manifest, slide.id(), triples);
        if (!dump_dir.empty()) write_patch_dump(dump_dir, slide.id(), triples);
        m.inputs.push_back(file);
      }
      if (g.out.empty()) {
        std::cout << manifest.str();
      } else {
        write_text(g.out, manifest.str());
        m.outputs.push_back(g.out);
        m.write_sidecars();
      }
    } else if (featurize->parsed()) {
      const Settings s = resolve_settings(g, o);
      const std::string out = require_out(g);
      if (fn_files.empty() && pc_files.empty()) throw ConfigError("featurize needs --fn and/or --pc slides");
      RunManifest m = start_manifest("featurize", argc, argv, g, s.experiment.seed);
      std::unique_ptr<FeatureBackend> backend;
      if (model_file.empty()) {
        backend = std::make_unique<TestBackend>(s.experiment.seed);
      } else {
        backend = load_cnn_backend(model_file);
        m.inputs.push_back(model_file);
      }
      // Recorded scale-1 origins per slide, when a manifest is given.
      std::map<std::string, std::vector<Point>> recorded;
      if (!manifest_file.empty()) {
        auto in = open_input(manifest_file);
        m.inputs.push_back(manifest_file);
        std::string line;
        std::getline(in, line);
        std::size_t line_no = 1;
        while (std::getline(in, line)) {
          ++line_no;
          std::vector<std::string> cells;
          std::stringstream ss(line);
          for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
          if (cells.size() != 6)
            throw FormatError(manifest_file + ": line " + std::to_string(line_no) + " needs 6 columns", 0);
          if (cells[2] == "1") recorded[cells[0]].push_back({std::stoll(cells[3]), std::stoll(cells[4])});
        }
      }
      std::vector<FeatureBag> bags;
      auto run = [&](const std::vector<std::string>& files, Label label) {
        for (const std::string& file : files) {
          const SlideImage slide = load_slide(file, label);
          std::vector<PatchTriple> triples;
          if (!manifest_file.empty()) {
            const auto it = recorded.find(slide.id());
            if (it == recorded.end())
              throw DataError("manifest has no patches for slide '" + slide.id() + "'");
            for (const Point& p : it->second) {
              PatchTriple t;
              t.specs = build_multiscale_specs(p, slide.width(), slide.height());
              for (std::size_t i = 0; i < 3; ++i) t.pixels[i] = extract_patch(slide, t.specs[i]);
              triples.push_back(std::move(t));
            }
          } else {
            Rng rng(slide_seed(s.experiment.seed, slide.id()));
            triples = sample_bag(slide, s.experiment.n_patches, rng, max_attempts);
          }
          bags.push_back(extract_features(*backend, triples, slide.id(), label, s.experiment.threads));
          m.inputs.push_back(file);
        }
      };
      run(fn_files, Label::kFN);
      run(pc_files, Label::kPC);
      write_cache(out, bags);
      m.outputs.push_back(out);
      m.write_sidecars();
    } else if (synth->parsed()) {
      Settings s = resolve_settings(g, o);
      if (preset) s.preset = preset;
      if (slides_per_class) s.slides_per_class = *slides_per_class;
      const std::string out = require_out(g);
      RunManifest m = start_manifest("synth", argc, argv, g, s.experiment.seed);
      write_cache(out, generate_synthetic_dataset(preset_spec(s, s.experiment.seed)));
      m.outputs.push_back(out);
      m.write_sidecars();
    } else if (fit->parsed()) {
      const Settings s = resolve_settings(g, o);
      const std::string out = require_out(g);
      const ExperimentConfig& c = s.experiment;
      const std::uint64_t rep_seed = repetition_seed(c.seed, rep);
      RunManifest m = start_manifest("fit-codebook", argc, argv, g, c.seed);
      m.inputs.push_back(cache_file);
      const auto bags = select_side(read_cache(cache_file), c, rep_seed, side);
      const AggregationModel model =
          fit_aggregator(c.method, bags, c.k, codebook_options(c, rep_seed, c.threads));
      const auto paths = codebook_paths(out, c.method);
      for (std::size_t i = 0; i < paths.size(); ++i) {
        write_codebook(paths[i], model.codebooks[i]);
        m.outputs.push_back(paths[i]);
      }
      m.write_sidecars();
    } else if (aggregate->parsed()) {
      const Settings s = resolve_settings(g, o);
      const std::string out = require_out(g);
      const ExperimentConfig& c = s.experiment;
      const std::uint64_t rep_seed = repetition_seed(c.seed, rep);
      RunManifest m = start_manifest("aggregate", argc, argv, g, c.seed);
      m.inputs.push_back(cache_file);
      AggregationModel model;
      model.method = c.method;
      for (const std::string& p : codebook_paths(codebook_file, c.method)) {
        model.codebooks.push_back(read_codebook(p));
        m.inputs.push_back(p);
      }
      model.k = model.codebooks.front().k();
      const std::size_t want_dim = c.method == Method::kMC ? 3 * kFeatureDim : kFeatureDim;
      for (const Codebook& cb : model.codebooks) {
        if (cb.k() != model.k) throw DimensionError("MM codebooks differ in k");
        if (cb.dim() != want_dim)
          throw DimensionError("codebook dimension " + std::to_string(cb.dim()) + " does not fit method " +
                               std::string(to_string(c.method)));
      }
      if (o.k && *o.k != model.k)
        throw DimensionError("--k " + std::to_string(*o.k) + " but the codebook has k = " +
                             std::to_string(model.k));
      const auto bags = select_side(read_cache(cache_file), c, rep_seed, side);
      const TrainingRows rows = training_histograms(model, bags, aggregate_aug1, rep_seed, c.threads);
      std::ofstream f(out);
      if (!f) throw DataError("cannot write '" + out + "'");
      write_histograms_csv(f, rows.histograms);
      f.close();
      m.outputs.push_back(out);
      m.write_sidecars();
    } else if (train->parsed()) {
      const Settings s = resolve_settings(g, o);
      const std::string out = require_out(g);
      const ExperimentConfig& c = s.experiment;
      RunManifest m = start_manifest("train", argc, argv, g, c.seed);
      m.inputs.push_back(hist_file);
      auto in = open_input(hist_file);
      const auto rows = read_histograms_csv(in);
      // Rows of one slide (original and Aug1 copies) form one group.
      std::map<std::string, std::size_t> group_of;
      std::vector<std::size_t> groups;
      for (const BagHistogram& h : rows) {
        const auto [it, inserted] = group_of.emplace(h.slide_id, group_of.size());
        groups.push_back(it->second);
      }
      const FittedClassifier fitted =
          fit_classifier(rows, groups, c, repetition_seed(c.seed, rep), c.threads);
      write_model(out, fitted.svm);
      m.outputs.push_back(out);
      if (!grid_out.empty() && fitted.grid) {
        std::ofstream gf(grid_out);
        write_grid_report_csv(gf, *fitted.grid);
        m.outputs.push_back(grid_out);
      }
      m.write_sidecars();
    } else if (evaluate->parsed()) {
      const Settings s = resolve_settings(g, o);
      RunManifest m = start_manifest("evaluate", argc, argv, g, s.experiment.seed);
      m.inputs = {model_file, hist_file};
      const SvmModel model = read_model(model_file);
      auto in = open_input(hist_file);
      const auto rows = read_histograms_csv(in);
      if (rows.empty()) throw SizeError("no histogram rows to evaluate");
      std::ostringstream pred;
      pred << "slide_id,label,predicted,decision\n";
      std::size_t correct = 0;
      char buf[64];
      for (const BagHistogram& h : rows) {
        const Prediction p = predict(model, h.values);
        correct += p.label == h.label;
        std::snprintf(buf, sizeof buf, "%.17g", p.decision);
        pred << h.slide_id << ',' << to_string(h.label) << ',' << to_string(p.label) << ',' << buf << '\n';
      }
      const double accuracy = static_cast<double>(correct) / static_cast<double>(rows.size());
      std::snprintf(buf, sizeof buf, "%.17g", accuracy);
      std::cout << "accuracy " << buf << '\n';
      if (!g.out.empty()) {
        write_text(g.out, pred.str());
        m.outputs.push_back(g.out);
        m.write_sidecars();
      }
    } else if (experiment->parsed()) {
      Settings s = resolve_settings(g, o);
      if (exp_cache) s.cache = exp_cache;
      if (preset) s.preset = preset;
      if (slides_per_class) s.slides_per_class = *slides_per_class;
      if (resample_flag) s.resample = true;
      const ExperimentConfig& c = s.experiment;
      RunManifest m = start_manifest("experiment", argc, argv, g, c.seed);
      ExperimentResult result;
      if (s.cache) {
        if (s.resample) throw ConfigError("--resample needs a synthetic preset, not a cache");
        m.inputs.push_back(*s.cache);
        auto bags = read_cache(*s.cache);
        if (s.np_set) bags = limit_patches(std::move(bags), c.n_patches);
        result = run_experiment(bags, c);
      } else if (s.resample) {
        const SyntheticSpec base = preset_spec(s, 0);
        result = run_experiment(
            [&](std::uint64_t seed) {
              SyntheticSpec spec = base;
              spec.seed = seed;
              return generate_synthetic_dataset(spec);
            },
            c);
      } else {
        result = run_experiment(generate_synthetic_dataset(preset_spec(s, c.seed)), c);
      }
      std::ostringstream csv;
      write_results_csv(csv, std::span(&result, 1));
      if (g.out.empty()) {
        std::cout << csv.str();
      } else {
        write_text(g.out, csv.str());
        m.outputs.push_back(g.out);
      }
      if (!reps_out.empty()) {
        std::ostringstream reps;
        write_repetitions_csv(reps, result);
        write_text(reps_out, reps.str());
        m.outputs.push_back(reps_out);
      }
      m.write_sidecars();
    } else if (report->parsed()) {
      const std::string out = require_out(g);
      RunManifest m = start_manifest("report", argc, argv, g, g.seed.value_or(0));
      std::vector<ExperimentResult> all;
      for (const std::string& file : result_files) {
        auto in = open_input(file);
        auto rs = read_results_csv(in);
        all.insert(all.end(), rs.begin(), rs.end());
        m.inputs.push_back(file);
      }
      write_text(out, render_report_svg(all, baseline));
      m.outputs.push_back(out);
      if (!csv_out.empty()) {
        std::ostringstream csv;
        write_results_csv(csv, all);
        write_text(csv_out, csv.str());
        m.outputs.push_back(csv_out);
      }
      m.write_sidecars();
    }
  } catch (const Error& e) {
    std::cerr << "msmil: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kUsage: return kExitUsage;
      case ErrorKind::kData: return kExitData;
      case ErrorKind::kNumerical: return kExitNumerical;
    }
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "msmil: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}
