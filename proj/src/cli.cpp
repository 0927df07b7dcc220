#include "cosrec/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "cosrec/baselines.hpp"
#include "cosrec/checkpoint.hpp"
#include "cosrec/data.hpp"
#include "cosrec/metrics.hpp"
#include "cosrec/run_config.hpp"
#include "cosrec/train.hpp"

namespace cosrec {

namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ifstream open_input(const std::string& path) {
  if (path.empty()) throw UsageError("no input path given");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open '" + path + "'");
  return in;
}

std::ofstream open_output(const std::string& path) {
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw UsageError("cannot write '" + path + "'");
  return out;
}

std::string default_raw_input(DatasetKind kind) {
  const char* dir = std::getenv(kDataDirVariable);
  if (!dir) return {};
  const fs::path base(dir);
  return (kind == DatasetKind::ml1m ? base / "ml-1m" / "ratings.dat" : base / "loc-gowalla_totalCheckins.txt").string();
}

std::string stats_json(const DatasetStats& s) {
  char buf[256];
  const int n = std::snprintf(buf, sizeof buf,
                              "{\"users\":%zu,\"items\":%zu,\"actions\":%zu,\"actions_per_user\":%.2f,"
                              "\"actions_per_item\":%.2f}",
                              s.users, s.items, s.actions, s.actions_per_user, s.actions_per_item);
  return std::string(buf, static_cast<std::size_t>(n));
}

// Bad flag values surface as std::invalid_argument from the parsers.
template <typename F>
auto as_usage(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Dataset read_dataset(const std::string& path) {
  auto in = open_input(path);
  return load_dataset(in);
}

Checkpoint read_checkpoint(const std::string& path) {
  auto in = open_input(path);
  return load_checkpoint(in);
}

// Flags shared by train; values start from the dataset defaults and are
// overridden only when given.
struct TrainFlags {
  std::string data;
  std::string out;
  std::string log;
  std::string dataset = "ml1m";
  std::map<std::string, std::size_t> sizes;
  std::map<std::string, double> reals;
  std::string variant = "cnn";
  std::uint64_t seed = 1;
};

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"CosRec sequential recommender: preprocess, train, evaluate, export filters", "cosrec"};
  app.require_subcommand(1);

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Filter, reindex and split a raw interaction log");
  std::string pre_kind = "ml1m", pre_input, pre_output;
  std::uint32_t min_user = 0, min_item = 0;
  std::uint64_t pre_seed = 0;
  pre->add_option("--dataset", pre_kind, "ml1m or gowalla")->capture_default_str();
  pre->add_option("--input", pre_input, std::string("raw log; defaults under $") + kDataDirVariable);
  pre->add_option("--output", pre_output, "dataset file to write")->required();
  pre->add_option("--min-user", min_user, "minimum actions per user (default 5 for ml1m, 15 for gowalla)");
  pre->add_option("--min-item", min_item, "minimum actions per item (default 5 for ml1m, 15 for gowalla)");
  pre->add_option("--seed", pre_seed, "recorded in the dataset header")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train CosRec or CosRec-base and write a checkpoint");
  TrainFlags tf;
  tr->add_option("--data", tf.data, "preprocessed dataset file")->required();
  tr->add_option("--out", tf.out, "checkpoint to write")->required();
  tr->add_option("--log", tf.log, "also write per-epoch JSON lines to this file");
  tr->add_option("--dataset", tf.dataset, "ml1m or gowalla; selects the default d")->capture_default_str();
  tr->add_option("--variant", tf.variant, "cnn or mlp-base")->capture_default_str();
  tr->add_option("--seed", tf.seed)->capture_default_str();
  const std::pair<const char*, const char*> size_flags[] = {
      {"d", "embedding size (default 50 for ml1m, 100 for gowalla)"},
      {"L", "window length [5]"},
      {"T", "targets per window [3]"},
      {"negatives", "negatives per target [3]"},
      {"batch-size", "[512]"},
      {"D1", "block 1 channels [128]"},
      {"D2", "block 2 channels [256]"},
      {"mlp-hidden", "hidden width of the mlp-base variant [512]"},
      {"first-kernel", "conv1_1 kernel size: 1, 3 or 5 [1]"},
      {"epochs", "[50]"},
      {"patience", "epochs without validation gain before stopping [5]"}};
  for (const auto& [name, help] : size_flags) {
    tr->add_option_function<std::size_t>(
        std::string("--") + name, [&tf, name](std::size_t v) { tf.sizes[name] = v; }, help);
  }
  const std::pair<const char*, const char*> real_flags[] = {
      {"lr", "Adam learning rate [0.001]"},
      {"dropout", "[0.5]"},
      {"val-fraction", "held-out share of each training portion; 0 disables validation [0.1]"},
      {"weight-decay", "L2 coefficient [0]"}};
  for (const auto& [name, help] : real_flags) {
    tr->add_option_function<double>(std::string("--") + name, [&tf, name](double v) { tf.reals[name] = v; }, help);
  }

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Report MAP, Prec@{1,5,10} and Recall@{1,5,10} on the test split");
  std::string ev_data, ev_checkpoint, ev_model;
  std::size_t ev_threads = 1;
  ev->add_option("--data", ev_data, "preprocessed dataset file")->required();
  auto* ck_opt = ev->add_option("--checkpoint", ev_checkpoint, "trained checkpoint");
  auto* model_opt = ev->add_option("--model", ev_model, "baseline to evaluate instead of a checkpoint (poprec)");
  ck_opt->excludes(model_opt);
  ev->add_option("--threads", ev_threads, "evaluation threads")->capture_default_str();

  // export-filters
  auto* ex = app.add_subcommand("export-filters", "Write convolution kernels as k x k CSV grids");
  std::string ex_checkpoint, ex_layer, ex_out;
  ex->add_option("--checkpoint", ex_checkpoint)->required();
  ex->add_option("--layer", ex_layer, "conv1_1, conv1_2, conv2_1 or conv2_2")->required();
  ex->add_option("--out", ex_out, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*pre) {
      const DatasetKind kind = as_usage([&] { return parse_dataset_kind(pre_kind); });
      const std::uint32_t threshold = kind == DatasetKind::ml1m ? 5 : 15;
      PreprocessOptions options{min_user ? min_user : threshold, min_item ? min_item : threshold, pre_seed};
      if (pre_input.empty()) pre_input = default_raw_input(kind);
      if (pre_input.empty()) throw UsageError(std::string("no --input given and $") + kDataDirVariable + " is unset");
      auto in = open_input(pre_input);
      const auto raw = kind == DatasetKind::ml1m ? parse_movielens(in) : parse_gowalla(in);
      const Dataset dataset = preprocess(raw, options);
      {
        auto file = open_output(pre_output);
        save_dataset(dataset, file);
      }
      const std::string summary = stats_json(dataset_stats(dataset));
      {
        auto file = open_output(pre_output + ".stats.json");
        file << summary << '\n';
      }
      out << summary << '\n';
      return kExitOk;
    }

    if (*tr) {
      RunConfig run = as_usage([&] { return RunConfig::defaults_for(parse_dataset_kind(tf.dataset)); });
      run.variant = as_usage([&] { return parse_variant(tf.variant); });
      run.seed = tf.seed;
      auto size_flag = [&](const char* name, std::size_t& field) {
        if (auto it = tf.sizes.find(name); it != tf.sizes.end()) field = it->second;
      };
      auto real_flag = [&](const char* name, double& field) {
        if (auto it = tf.reals.find(name); it != tf.reals.end()) field = it->second;
      };
      size_flag("d", run.dim);
      size_flag("L", run.markov_order);
      size_flag("T", run.horizon);
      size_flag("negatives", run.negatives);
      size_flag("batch-size", run.batch_size);
      size_flag("D1", run.block1_channels);
      size_flag("D2", run.block2_channels);
      size_flag("mlp-hidden", run.mlp_hidden);
      size_flag("first-kernel", run.first_kernel);
      size_flag("epochs", run.epochs);
      size_flag("patience", run.patience);
      real_flag("lr", run.learning_rate);
      real_flag("dropout", run.dropout);
      real_flag("val-fraction", run.validation_fraction);
      real_flag("weight-decay", run.weight_decay);
      as_usage([&] { return run.model_config(1, 1); });
      if (run.negatives == 0 || run.batch_size < 2 || run.epochs == 0) {
        throw UsageError("--negatives and --epochs must be >= 1 and --batch-size >= 2");
      }
      if (!(run.validation_fraction >= 0.0 && run.validation_fraction < 1.0)) {
        throw UsageError("--val-fraction must be in [0, 1)");
      }
      if (!(run.learning_rate > 0.0) || run.weight_decay < 0.0) {
        throw UsageError("--lr must be positive and --weight-decay non-negative");
      }

      const Dataset dataset = read_dataset(tf.data);
      std::ofstream log_file;
      if (!tf.log.empty()) log_file = open_output(tf.log);
      auto outcome = train_model<Real>(dataset, run, [&](const EpochLog& log) {
        const std::string line = format_epoch_log(log);
        out << line << std::endl;
        if (log_file) log_file << line << std::endl;
      });
      const Checkpoint checkpoint = make_checkpoint(run, outcome.model, &outcome.optimizer, outcome.rng);
      auto file = open_output(tf.out);
      save_checkpoint(checkpoint, file);
      return kExitOk;
    }

    if (*ev) {
      const Dataset dataset = read_dataset(ev_data);
      EvaluateOptions options;
      options.threads = ev_threads;
      MetricsReport report;
      if (!ev_model.empty()) {
        if (ev_model != "poprec") throw UsageError("unknown baseline '" + ev_model + "' (expected poprec)");
        report = evaluate(PopRec::fit(dataset), dataset, options);
      } else {
        if (ev_checkpoint.empty()) throw UsageError("evaluate needs --checkpoint or --model poprec");
        const Checkpoint checkpoint = read_checkpoint(ev_checkpoint);
        if (checkpoint.num_users != dataset.num_users() || checkpoint.num_items != dataset.num_items()) {
          throw UsageError("checkpoint vocabulary (" + std::to_string(checkpoint.num_users) + " users, " +
                           std::to_string(checkpoint.num_items) + " items) does not match dataset (" +
                           std::to_string(dataset.num_users()) + " users, " + std::to_string(dataset.num_items()) +
                           " items)");
        }
        const auto model = restore_model<Real>(checkpoint);
        report = evaluate(ModelScorer<Real>(model), dataset, options);
      }
      out << format_metrics(report) << '\n';
      return kExitOk;
    }

    if (*ex) {
      const Checkpoint checkpoint = read_checkpoint(ex_checkpoint);
      std::string layer = ex_layer;
      if (const auto dot = layer.find('.'); dot != std::string::npos) layer.resize(dot);
      std::vector<std::string> valid;
      for (const auto& name : checkpoint.names()) {
        if (name.rfind("conv", 0) == 0 && name.size() > 7 && name.substr(name.size() - 7) == ".weight") {
          valid.push_back(name.substr(0, name.size() - 7));
        }
      }
      const StoredTensor* t = checkpoint.find(layer + ".weight");
      if (!t || t->value.rank() != 4) {
        std::string list;
        for (const auto& v : valid) list += (list.empty() ? "" : ", ") + v;
        throw UsageError("unknown layer '" + ex_layer + "'; valid layers: " + (list.empty() ? "(none)" : list));
      }
      const auto& w = t->value;
      const std::size_t outs = w.dim(0), ins = w.dim(1), k = w.dim(2);
      fs::create_directories(ex_out);
      auto index = open_output((fs::path(ex_out) / "index.csv").string());
      index << "out_channel,in_channel,kernel,file\n";
      char buf[64];
      for (std::size_t o = 0; o < outs; ++o) {
        for (std::size_t i = 0; i < ins; ++i) {
          const std::string file = layer + "_o" + std::to_string(o) + "_i" + std::to_string(i) + ".csv";
          auto csv = open_output((fs::path(ex_out) / file).string());
          for (std::size_t r = 0; r < k; ++r) {
            for (std::size_t c = 0; c < k; ++c) {
              std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(w.at(o, i, r, c)));
              csv << (c ? "," : "") << buf;
            }
            csv << '\n';
          }
          index << o << ',' << i << ',' << k << ',' << file << '\n';
        }
      }
      out << "{\"layer\":\"" << layer << "\",\"grids\":" << outs * ins << ",\"kernel\":" << k << "}\n";
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace cosrec
