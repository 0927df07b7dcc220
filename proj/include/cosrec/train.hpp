#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cosrec/data.hpp"
#include "cosrec/metrics.hpp"
#include "cosrec/model.hpp"
#include "cosrec/optim.hpp"
#include "cosrec/rng.hpp"
#include "cosrec/run_config.hpp"

namespace cosrec {

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean per training window
  std::size_t windows = 0;
  std::optional<MetricsReport> validation;
  double seconds = 0.0;
};

template <typename T>
struct TrainOutcome {
  CosRecModel<T> model;
  Adam<T> optimizer;
  Rng rng;
  std::vector<EpochLog> epochs;
  std::size_t best_epoch = 0;
};

// Groups a shuffled window order into batches; a trailing batch of one window
// is folded into the previous batch so batchnorm always sees two samples.
std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t count, std::size_t batch_size);

// Trains for run.epochs epochs. With a validation fraction, the last part of
// each training portion is held out, MAP on it is tracked every epoch, and
// training stops after `patience` epochs without improvement, keeping the
// best parameters. Throws NumericError on a non-finite loss.
template <typename T>
TrainOutcome<T> train_model(const Dataset& dataset, const RunConfig& run,
                            const std::function<void(const EpochLog&)>& on_epoch = {});

// One JSON object per line, e.g. {"epoch":1,"loss":2.345678,"val_map":0.1234,...}.
std::string format_epoch_log(const EpochLog& log);

// {"map":0.0687,"prec@1":0.1280,...} with 4 decimals.
std::string format_metrics(const MetricsReport& report);

}  // namespace cosrec
