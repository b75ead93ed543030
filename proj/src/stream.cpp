#include "streamfed/stream.hpp"

#include "streamfed/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>

namespace streamfed {

CountingProcessSpec CountingProcessSpec::constant_rate(int b) {
  CountingProcessSpec spec;
  spec.kind = Kind::ConstantRate;
  spec.batch = b;
  spec.validate();
  return spec;
}

CountingProcessSpec CountingProcessSpec::single_pulse(int n0) {
  CountingProcessSpec spec;
  spec.kind = Kind::SinglePulse;
  spec.pulse = n0;
  spec.validate();
  return spec;
}

CountingProcessSpec CountingProcessSpec::poisson(double rate, int min_batch) {
  CountingProcessSpec spec;
  spec.kind = Kind::Poisson;
  spec.rate = rate;
  spec.min_batch = min_batch;
  spec.validate();
  return spec;
}

CountingProcessSpec CountingProcessSpec::scheduled(std::vector<int> sizes) {
  CountingProcessSpec spec;
  spec.kind = Kind::Schedule;
  spec.schedule = std::move(sizes);
  spec.validate();
  return spec;
}

void CountingProcessSpec::validate() const {
  switch (kind) {
    case Kind::ConstantRate:
      if (batch < 1) throw InvalidArgument("constant-rate batch must be >= 1");
      break;
    case Kind::SinglePulse:
      if (pulse < 1) throw InvalidArgument("single-pulse size must be >= 1");
      break;
    case Kind::Poisson:
      if (!(rate > 0.0) || !std::isfinite(rate)) {
        throw InvalidArgument("Poisson rate must be positive");
      }
      if (min_batch < 1) throw InvalidArgument("Poisson min_batch must be >= 1");
      break;
    case Kind::Schedule:
      for (int b : schedule) {
        if (b < 0) throw InvalidArgument("scheduled batch sizes must be >= 0");
      }
      break;
  }
}

BatchDraw draw_batch_size(const CountingProcessSpec& process, int client_id,
                          int round, std::uint64_t root_seed) {
  if (round < 1) throw InvalidArgument("rounds are numbered from 1");
  switch (process.kind) {
    case CountingProcessSpec::Kind::ConstantRate:
      return {process.batch, false};
    case CountingProcessSpec::Kind::SinglePulse:
      return {round == 1 ? process.pulse : 0, false};
    case CountingProcessSpec::Kind::Poisson: {
      auto rng = make_rng(root_seed, StreamPurpose::Arrivals,
                          static_cast<std::uint64_t>(client_id),
                          static_cast<std::uint64_t>(round));
      std::poisson_distribution<int> dist(process.rate);
      const int raw = dist(rng);
      if (raw < process.min_batch) return {process.min_batch, true};
      return {raw, false};
    }
    case CountingProcessSpec::Kind::Schedule: {
      const auto t = static_cast<std::size_t>(round);
      return {t <= process.schedule.size() ? process.schedule[t - 1] : 0, false};
    }
  }
  return {};
}

std::vector<int> plan_batch_sizes(const CountingProcessSpec& process,
                                  int client_id, int horizon,
                                  std::uint64_t root_seed) {
  std::vector<int> sizes;
  sizes.reserve(static_cast<std::size_t>(std::max(horizon, 0)));
  for (int t = 1; t <= horizon; ++t) {
    sizes.push_back(draw_batch_size(process, client_id, t, root_seed).size);
  }
  return sizes;
}

ClientStream::ClientStream(int client_id, CountingProcessSpec process,
                           std::shared_ptr<const std::vector<Example>> samples,
                           std::uint64_t root_seed)
    : client_id_(client_id),
      process_(process),
      samples_(std::move(samples)),
      root_seed_(root_seed) {
  process_.validate();
  if (!samples_) throw InvalidArgument("stream source must not be null");
}

ClientStream::ClientStream(int client_id, CountingProcessSpec process,
                           SampleGenerator generator, std::uint64_t root_seed)
    : client_id_(client_id),
      process_(process),
      generator_(std::move(generator)),
      root_seed_(root_seed) {
  process_.validate();
  if (!generator_) throw InvalidArgument("stream generator must be callable");
}

std::vector<Example> ClientStream::next_batch(int round) {
  if (round != last_round_ + 1) {
    throw InvalidArgument("client " + std::to_string(client_id_) +
                          ": rounds must be consumed in order (expected " +
                          std::to_string(last_round_ + 1) + ", got " +
                          std::to_string(round) + ")");
  }
  last_round_ = round;
  const BatchDraw draw = draw_batch_size(process_, client_id_, round, root_seed_);
  if (draw.clamped) ++clamp_events_;

  std::vector<Example> batch;
  batch.reserve(static_cast<std::size_t>(draw.size));
  if (samples_) {
    const auto available =
        static_cast<std::int64_t>(samples_->size()) - (next_index_ - 1);
    if (available < draw.size) {
      throw InvalidArgument("client " + std::to_string(client_id_) +
                            ": stream exhausted at round " +
                            std::to_string(round) + " (needs " +
                            std::to_string(draw.size) + ", has " +
                            std::to_string(available) + ")");
    }
    for (int k = 0; k < draw.size; ++k) {
      Example z = (*samples_)[static_cast<std::size_t>(next_index_ - 1)];
      z.client_id = client_id_;
      z.arrival_round = round;
      z.global_index = next_index_++;
      batch.push_back(std::move(z));
    }
    return batch;
  }

  auto rng = make_rng(root_seed_, StreamPurpose::SampleData,
                      static_cast<std::uint64_t>(client_id_),
                      static_cast<std::uint64_t>(round));
  for (int k = 0; k < draw.size; ++k) {
    Example z;
    generator_(rng, z);
    z.client_id = client_id_;
    z.arrival_round = round;
    z.global_index = next_index_++;
    batch.push_back(std::move(z));
  }
  return batch;
}

void SyntheticSpec::validate() const {
  if (d < 1) throw InvalidArgument("synthetic: d must be >= 1");
  if (M < 1) throw InvalidArgument("synthetic: M must be >= 1");
  if (!(epsilon >= 0.0)) throw InvalidArgument("synthetic: epsilon must be >= 0");
  if (per_client_counts.size() != static_cast<std::size_t>(M)) {
    throw InvalidArgument("synthetic: per_client_counts must have M entries");
  }
  for (int n : per_client_counts) {
    if (n < 1) throw InvalidArgument("synthetic: every client needs >= 1 sample");
  }
}

void draw_synthetic_sample(const Vector& theta, Rng& rng, Example& out) {
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  const auto d = theta.size();
  out.features.resize(d);
  for (Eigen::Index k = 0; k + 1 < d; ++k) out.features[k] = unif(rng);
  out.features[d - 1] = 1.0;
  std::bernoulli_distribution coin(sigmoid(out.features.dot(theta)));
  out.label = coin(rng) ? 1.0 : 0.0;
}

SampleGenerator SyntheticDataset::generator(int client_id) const {
  if (client_id < 0 || client_id >= static_cast<int>(client_thetas.size())) {
    throw InvalidArgument("synthetic generator: unknown client");
  }
  Vector theta = client_thetas[static_cast<std::size_t>(client_id)];
  return [theta = std::move(theta)](Rng& rng, Example& out) {
    draw_synthetic_sample(theta, rng, out);
  };
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticDataset data;
  std::normal_distribution<double> normal(0.0, 1.0);

  auto truth_rng = make_rng(spec.seed, StreamPurpose::GroundTruth, 0, 0);
  data.theta0.resize(spec.d);
  for (int k = 0; k < spec.d; ++k) data.theta0[k] = normal(truth_rng);

  for (int m = 0; m < spec.M; ++m) {
    auto rng = make_rng(spec.seed, StreamPurpose::GroundTruth,
                        static_cast<std::uint64_t>(m) + 1, 0);
    Vector theta = data.theta0;
    if (spec.epsilon > 0.0) {
      for (int k = 0; k < spec.d; ++k) theta[k] += spec.epsilon * normal(rng);
    }
    data.client_thetas.push_back(std::move(theta));
  }

  for (int m = 0; m < spec.M; ++m) {
    auto rng = make_rng(spec.seed, StreamPurpose::SampleData,
                        static_cast<std::uint64_t>(m), 0);
    std::vector<Example> samples;
    const int n = spec.per_client_counts[static_cast<std::size_t>(m)];
    samples.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      Example z;
      draw_synthetic_sample(data.client_thetas[static_cast<std::size_t>(m)], rng, z);
      z.client_id = m;
      z.global_index = i + 1;
      samples.push_back(std::move(z));
    }
    data.clients.push_back(std::move(samples));
  }
  return data;
}

std::map<int, std::vector<Example>> load_csv_corpus(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open corpus " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("corpus is empty");
  std::vector<std::string> header;
  {
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 4 || header[0] != "client_id" ||
      header[1] != "arrival_round" || header[2] != "label") {
    throw InvalidArgument(
        "corpus header must be client_id,arrival_round,label,f0,...");
  }
  const std::size_t n_features = header.size() - 3;

  struct Row {
    int client;
    int round;
    std::size_t order;
    Example example;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> values;
    while (std::getline(ss, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw InvalidArgument("corpus line " + std::to_string(line_no) +
                              ": cannot parse '" + cell + "'");
      }
    }
    if (values.size() != header.size()) {
      throw InvalidArgument("corpus line " + std::to_string(line_no) +
                            ": expected " + std::to_string(header.size()) +
                            " fields");
    }
    Row row;
    row.client = static_cast<int>(values[0]);
    row.round = static_cast<int>(values[1]);
    row.order = rows.size();
    row.example.label = values[2];
    row.example.features.resize(static_cast<Eigen::Index>(n_features));
    for (std::size_t k = 0; k < n_features; ++k) {
      row.example.features[static_cast<Eigen::Index>(k)] = values[3 + k];
    }
    rows.push_back(std::move(row));
  }

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    return std::tie(a.client, a.round, a.order) <
           std::tie(b.client, b.round, b.order);
  });

  std::map<int, std::vector<Example>> corpus;
  for (auto& row : rows) {
    auto& list = corpus[row.client];
    row.example.client_id = row.client;
    row.example.arrival_round = row.round;
    row.example.global_index = static_cast<std::int64_t>(list.size()) + 1;
    list.push_back(std::move(row.example));
  }
  return corpus;
}

}  // namespace streamfed
