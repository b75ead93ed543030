#include "streamfed/weighting.hpp"

#include "streamfed/error.hpp"
#include "streamfed/io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace streamfed {

ImportanceVector::ImportanceVector(std::vector<double> p, double tol)
    : p_(std::move(p)) {
  double total = 0.0;
  for (double v : p_) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidArgument("importance entries must be finite and >= 0");
    }
    total += v;
  }
  if (std::abs(total - 1.0) > tol) {
    throw InvalidArgument("importance vector sums to " + format_double(total) +
                          ", expected 1");
  }
}

ImportanceVector ImportanceVector::normalized(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw InvalidArgument("weights must be finite and >= 0");
    }
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("weights have zero total mass");
  std::vector<double> p(weights.size());
  std::transform(weights.begin(), weights.end(), p.begin(),
                 [total](double w) { return w / total; });
  return ImportanceVector(std::move(p), 1e-10);
}

double ImportanceVector::sum_range(std::size_t begin, std::size_t end) const {
  end = std::min(end, p_.size());
  double s = 0.0;
  for (std::size_t m = begin; m < end; ++m) s += p_[m];
  return s;
}

WeightScheme WeightScheme::unit() { return WeightScheme{}; }

WeightScheme WeightScheme::inverse_residence() {
  WeightScheme s;
  s.kind_ = Kind::InverseResidence;
  return s;
}

WeightScheme WeightScheme::per_client(std::vector<double> lambdas) {
  for (double l : lambdas) {
    if (!std::isfinite(l) || l < 0.0) {
      throw InvalidArgument("per-client weights must be finite and >= 0");
    }
  }
  WeightScheme s;
  s.kind_ = Kind::PerClientStationary;
  s.lambdas_ = std::move(lambdas);
  return s;
}

WeightScheme WeightScheme::table(Table fn) {
  if (!fn) throw InvalidArgument("weight table must be callable");
  WeightScheme s;
  s.kind_ = Kind::ExplicitTable;
  s.table_ = std::move(fn);
  return s;
}

double WeightScheme::weight(const WeightContext& ctx) const {
  switch (kind_) {
    case Kind::UnitWeights:
      return 1.0;
    case Kind::InverseResidence:
      if (ctx.planned_residence < 1) {
        throw InvalidArgument("inverse-residence weights need a residence plan");
      }
      return 1.0 / static_cast<double>(ctx.planned_residence);
    case Kind::PerClientStationary:
      if (ctx.client_id < 0 ||
          static_cast<std::size_t>(ctx.client_id) >= lambdas_.size()) {
        throw InvalidArgument("no stationary weight for client " +
                              std::to_string(ctx.client_id));
      }
      return lambdas_[static_cast<std::size_t>(ctx.client_id)];
    case Kind::ExplicitTable: {
      const double w = table_(ctx);
      if (!std::isfinite(w) || w < 0.0) {
        throw InvalidArgument("weight table returned a negative or non-finite value");
      }
      return w;
    }
  }
  return 0.0;
}

double RoundRecord::total_mass() const {
  double s = 0.0;
  for (const auto& c : clients) s += c.mass;
  return s;
}

void RoundTrace::append(RoundRecord record) {
  if (static_cast<int>(record.clients.size()) != num_clients_) {
    throw InvalidArgument("round record has the wrong number of clients");
  }
  if (record.round != horizon() + 1) {
    throw InvalidArgument("rounds must be appended in order");
  }
  rounds_.push_back(std::move(record));
}

const RoundRecord& RoundTrace::round(int t) const {
  if (t < 1 || t > horizon()) {
    throw InvalidArgument("round " + std::to_string(t) + " not in trace");
  }
  return rounds_[static_cast<std::size_t>(t - 1)];
}

RoundWeights round_weights(const RoundRecord& record) {
  std::vector<double> masses;
  masses.reserve(record.clients.size());
  for (const auto& c : record.clients) masses.push_back(c.mass);
  const double total = record.total_mass();
  if (!(total > 0.0)) {
    throw NumericError("round " + std::to_string(record.round) +
                       " has zero total weight mass");
  }
  return {ImportanceVector::normalized(masses), total};
}

std::vector<double> round_mass_share(const RoundTrace& trace) {
  if (trace.horizon() < 1) throw InvalidArgument("trace is empty");
  std::vector<double> q;
  q.reserve(trace.rounds().size());
  double grand = 0.0;
  for (const auto& r : trace.rounds()) {
    q.push_back(r.total_mass());
    grand += q.back();
  }
  if (!(grand > 0.0)) throw NumericError("trace has zero total weight mass");
  for (double& v : q) v /= grand;
  return q;
}

SampleImportance sample_importance(const RoundTrace& trace) {
  SampleImportance table;
  table.per_client.resize(static_cast<std::size_t>(trace.num_clients()));
  double grand = 0.0;
  for (const auto& r : trace.rounds()) {
    for (const auto& c : r.clients) {
      auto& row = table.per_client.at(static_cast<std::size_t>(c.client_id));
      for (std::size_t k = 0; k < c.indices.size(); ++k) {
        row[c.indices[k]] += c.weights[k];
      }
      grand += c.mass;
    }
  }
  if (!(grand > 0.0)) throw NumericError("trace has zero total weight mass");
  for (auto& row : table.per_client) {
    for (auto& [idx, v] : row) v /= grand;
  }
  return table;
}

ImportanceVector SampleImportance::client_totals() const {
  std::vector<double> p;
  p.reserve(per_client.size());
  for (const auto& row : per_client) {
    double s = 0.0;
    for (const auto& [idx, v] : row) s += v;
    p.push_back(s);
  }
  return ImportanceVector(std::move(p), 1e-10);
}

std::vector<double> SampleImportance::flatten() const {
  std::vector<double> flat;
  for (const auto& row : per_client) {
    for (const auto& [idx, v] : row) flat.push_back(v);
  }
  return flat;
}

double SampleImportance::get(int client, std::int64_t index) const {
  const auto& row = per_client.at(static_cast<std::size_t>(client));
  const auto it = row.find(index);
  return it == row.end() ? 0.0 : it->second;
}

double effective_sample_size(std::span<const double> table) {
  double sq = 0.0;
  for (double v : table) {
    if (!std::isfinite(v) || v < 0.0) {
      throw InvalidArgument("importance table has negative or non-finite entries");
    }
    sq += v * v;
  }
  if (!(sq > 0.0)) throw InvalidArgument("importance table is all zero");
  return 1.0 / sq;
}

double effective_sample_size(const SampleImportance& table) {
  const auto flat = table.flatten();
  return effective_sample_size(flat);
}

std::vector<double> importance_to_client_weights(const ImportanceVector& p,
                                                 std::span<const double> counts) {
  if (counts.size() != p.size()) {
    throw InvalidArgument("importance and counts differ in length");
  }
  std::vector<double> lambda(p.size(), 0.0);
  double largest = 0.0;
  for (std::size_t m = 0; m < p.size(); ++m) {
    if (p[m] == 0.0) continue;
    if (!(counts[m] > 0.0)) {
      throw InvalidArgument("client " + std::to_string(m) +
                            " has positive importance but no samples");
    }
    lambda[m] = p[m] / counts[m];
    largest = std::max(largest, lambda[m]);
  }
  for (double& l : lambda) l /= largest;
  return lambda;
}

std::vector<double> client_importance_from_rounds(const RoundTrace& trace) {
  const auto q = round_mass_share(trace);
  std::vector<double> p(static_cast<std::size_t>(trace.num_clients()), 0.0);
  for (std::size_t t = 0; t < q.size(); ++t) {
    const auto w = round_weights(trace.rounds()[t]);
    for (std::size_t m = 0; m < p.size(); ++m) p[m] += q[t] * w.p[m];
  }
  return p;
}

void write_trace_csv(std::ostream& out, const RoundTrace& trace) {
  const auto q = round_mass_share(trace);
  out << "round,client,mass,p_mt,q_t\n";
  for (std::size_t t = 0; t < q.size(); ++t) {
    const auto& r = trace.rounds()[t];
    const auto w = round_weights(r);
    for (const auto& c : r.clients) {
      out << r.round << ',' << c.client_id << ',' << format_double(c.mass) << ','
          << format_double(w.p[static_cast<std::size_t>(c.client_id)]) << ','
          << format_double(q[t]) << '\n';
    }
  }
}

}  // namespace streamfed
