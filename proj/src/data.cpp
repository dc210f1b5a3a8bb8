#include "csa/data.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "csa/random.h"

namespace csa {

CovariateSchema::CovariateSchema(std::vector<ColumnSpec> columns)
    : columns_(std::move(columns)) {
  if (columns_.empty()) throw Error("covariate schema needs at least one column");
  std::set<std::string> seen;
  for (const auto& c : columns_) {
    if (c.name.empty()) throw Error("covariate schema has an unnamed column");
    if (!seen.insert(c.name).second) {
      throw Error("duplicate covariate column: " + c.name);
    }
  }
}

Json CovariateSchema::to_json() const {
  Json arr = Json::array();
  for (const auto& c : columns_) {
    arr.push_back({{"name", c.name},
                   {"kind", c.kind == ColumnKind::kContinuous ? "continuous"
                                                              : "categorical"}});
  }
  return arr;
}

CovariateSchema CovariateSchema::from_json(const Json& j) {
  std::vector<ColumnSpec> cols;
  for (const auto& c : j) {
    ColumnSpec spec;
    spec.name = c.at("name").get<std::string>();
    const auto kind = c.value("kind", std::string("continuous"));
    if (kind == "continuous") {
      spec.kind = ColumnKind::kContinuous;
    } else if (kind == "categorical") {
      spec.kind = ColumnKind::kCategorical;
    } else {
      throw Error("unknown column kind '" + kind + "' for " + spec.name);
    }
    cols.push_back(std::move(spec));
  }
  return CovariateSchema(std::move(cols));
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "?";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "valid") return Split::kValid;
  if (s == "test") return Split::kTest;
  throw Error("unknown split label: " + s);
}

std::size_t RawDataset::missing_count() const {
  std::size_t n = 0;
  for (const auto& c : columns) n += std::count(c.missing.begin(), c.missing.end(), true);
  return n;
}

SubjectRecord SurvivalDataset::record(std::size_t i) const {
  SubjectRecord r;
  r.x = x.row(static_cast<Eigen::Index>(i)).transpose();
  r.a = outcomes.a[i];
  r.y = outcomes.y[i];
  r.delta = outcomes.delta[i];
  return r;
}

std::vector<std::size_t> SurvivalDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

Json Standardization::to_json() const {
  Json arr = Json::array();
  for (const auto& f : features) {
    Json e = {{"column", f.column}, {"mean", f.mean}, {"scale", f.scale}};
    if (f.level) e["level"] = *f.level;
    arr.push_back(std::move(e));
  }
  return {{"schema_version", kSchemaVersion}, {"features", arr}};
}

Standardization Standardization::from_json(const Json& j) {
  Standardization s;
  for (const auto& e : j.at("features")) {
    FeatureTransform f;
    f.column = e.at("column").get<std::string>();
    f.mean = e.at("mean").get<double>();
    f.scale = e.at("scale").get<double>();
    if (e.contains("level")) f.level = e.at("level").get<std::string>();
    s.features.push_back(std::move(f));
  }
  return s;
}

namespace {

bool parse_real(const std::string& s, double& out) {
  const char* b = s.data();
  const char* e = s.data() + s.size();
  while (b < e && *b == ' ') ++b;
  while (e > b && *(e - 1) == ' ') --e;
  if (b == e) return false;
  auto res = std::from_chars(b, e, out);
  return res.ec == std::errc() && res.ptr == e && std::isfinite(out);
}

int parse_indicator(const std::string& s, const std::string& what,
                    std::size_t row) {
  double v = 0.0;
  if (!parse_real(s, v) || (v != 0.0 && v != 1.0)) {
    throw Error("row " + std::to_string(row) + ": " + what +
                " must be 0 or 1, got '" + s + "'");
  }
  return static_cast<int>(v);
}

}  // namespace

RawDataset load_csv(const std::filesystem::path& path,
                    const CovariateSchema& schema, const ColumnMap& map) {
  const CsvTable table = read_csv(path);
  const int iy = table.column(map.time);
  const int id = table.column(map.event);
  const int ia = table.column(map.treatment);
  if (iy < 0) throw Error("CSV lacks time column \"" + map.time + "\"");
  if (id < 0) throw Error("CSV lacks event column \"" + map.event + "\"");
  if (ia < 0) throw Error("CSV lacks treatment column \"" + map.treatment + "\"");
  std::vector<int> cov_idx;
  for (const auto& c : schema.columns()) {
    const int k = table.column(c.name);
    if (k < 0) throw Error("CSV lacks covariate column \"" + c.name + "\"");
    cov_idx.push_back(k);
  }

  RawDataset data;
  data.schema = schema;
  data.columns.resize(schema.size());
  const std::size_t n = table.rows.size();
  for (auto& c : data.columns) c.missing.reserve(n);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& row = table.rows[r];
    const std::size_t row_no = r + 1;
    double y = 0.0;
    if (row[iy].empty()) {
      throw Error("row " + std::to_string(row_no) + ": missing " + map.time);
    }
    if (!parse_real(row[iy], y)) {
      throw Error("row " + std::to_string(row_no) + ": cannot parse " +
                  map.time + " '" + row[iy] + "'");
    }
    if (y <= 0.0) {
      throw Error("row " + std::to_string(row_no) + ": " + map.time +
                  " must be positive");
    }
    if (row[id].empty()) {
      throw Error("row " + std::to_string(row_no) + ": missing " + map.event);
    }
    if (row[ia].empty()) {
      throw Error("row " + std::to_string(row_no) + ": missing " +
                  map.treatment);
    }
    data.outcomes.y.push_back(y);
    data.outcomes.delta.push_back(parse_indicator(row[id], map.event, row_no));
    data.outcomes.a.push_back(parse_indicator(row[ia], map.treatment, row_no));

    for (std::size_t c = 0; c < schema.size(); ++c) {
      const std::string& cell = row[cov_idx[c]];
      RawColumn& col = data.columns[c];
      const bool missing = cell.empty();
      col.missing.push_back(missing);
      if (schema[c].kind == ColumnKind::kContinuous) {
        double v = std::numeric_limits<double>::quiet_NaN();
        if (!missing && !parse_real(cell, v)) {
          throw Error("row " + std::to_string(row_no) + ": cannot parse " +
                      schema[c].name + " '" + cell + "'");
        }
        col.numeric.push_back(v);
      } else {
        col.level.push_back(cell);
      }
    }
  }
  return data;
}

RawDataset impute_missing(const RawDataset& data) {
  if (data.split.size() != data.size()) {
    throw Error("impute_missing requires split labels");
  }
  RawDataset out = data;
  for (std::size_t c = 0; c < data.schema.size(); ++c) {
    const RawColumn& col = data.columns[c];
    RawColumn& dst = out.columns[c];
    if (std::none_of(col.missing.begin(), col.missing.end(),
                     [](bool b) { return b; })) {
      continue;
    }
    if (data.schema[c].kind == ColumnKind::kContinuous) {
      std::vector<double> vals;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == Split::kTrain && !col.missing[i]) {
          vals.push_back(col.numeric[i]);
        }
      }
      if (vals.empty()) {
        throw Error("column " + data.schema[c].name +
                    " is entirely missing in the training split");
      }
      std::sort(vals.begin(), vals.end());
      const std::size_t m = vals.size();
      const double median =
          m % 2 == 1 ? vals[m / 2] : 0.5 * (vals[m / 2 - 1] + vals[m / 2]);
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (col.missing[i]) dst.numeric[i] = median;
      }
    } else {
      std::map<std::string, std::size_t> counts;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == Split::kTrain && !col.missing[i]) {
          ++counts[col.level[i]];
        }
      }
      if (counts.empty()) {
        throw Error("column " + data.schema[c].name +
                    " is entirely missing in the training split");
      }
      // std::map iterates in lexicographic order, so strict > keeps the
      // smallest level among ties.
      std::string mode;
      std::size_t best = 0;
      for (const auto& [lvl, cnt] : counts) {
        if (cnt > best) {
          best = cnt;
          mode = lvl;
        }
      }
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (col.missing[i]) dst.level[i] = mode;
      }
    }
    std::fill(dst.missing.begin(), dst.missing.end(), false);
  }
  return out;
}

namespace {

Standardization fit_standardization(const RawDataset& data) {
  if (data.split.size() != data.size()) {
    throw Error("standardize requires split labels");
  }
  if (data.missing_count() != 0) {
    throw Error("standardize requires imputed data");
  }
  Standardization t;
  for (std::size_t c = 0; c < data.schema.size(); ++c) {
    const auto& spec = data.schema[c];
    const RawColumn& col = data.columns[c];
    if (spec.kind == ColumnKind::kContinuous) {
      double sum = 0.0;
      std::size_t n = 0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == Split::kTrain) {
          sum += col.numeric[i];
          ++n;
        }
      }
      if (n == 0) throw Error("standardize: training split is empty");
      const double mean = sum / static_cast<double>(n);
      double ss = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == Split::kTrain) {
          const double d = col.numeric[i] - mean;
          ss += d * d;
        }
      }
      double sd = std::sqrt(ss / static_cast<double>(n));
      if (!(sd > 0.0)) {
        t.warnings.push_back("column " + spec.name +
                             " has zero variance in the training split; scale set to 1");
        sd = 1.0;
      }
      t.features.push_back({spec.name, std::nullopt, mean, sd});
    } else {
      std::set<std::string> levels;
      for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.split[i] == Split::kTrain) levels.insert(col.level[i]);
      }
      for (const auto& lvl : levels) {
        t.features.push_back({spec.name, lvl, 0.0, 1.0});
      }
    }
  }
  return t;
}

}  // namespace

SurvivalDataset apply_standardization(const RawDataset& data,
                                      const Standardization& transform) {
  if (data.missing_count() != 0) {
    throw Error("standardize requires imputed data");
  }
  SurvivalDataset out;
  out.outcomes = data.outcomes;
  out.split = data.split;
  const auto n = static_cast<Eigen::Index>(data.size());
  out.x.resize(n, static_cast<Eigen::Index>(transform.features.size()));
  std::map<std::string, std::size_t> col_of;
  for (std::size_t c = 0; c < data.schema.size(); ++c) col_of[data.schema[c].name] = c;
  for (std::size_t f = 0; f < transform.features.size(); ++f) {
    const auto& ft = transform.features[f];
    auto it = col_of.find(ft.column);
    if (it == col_of.end()) {
      throw Error("standardization refers to unknown column " + ft.column);
    }
    const RawColumn& col = data.columns[it->second];
    const auto fi = static_cast<Eigen::Index>(f);
    if (ft.level) {
      out.feature_names.push_back(ft.column + "=" + *ft.level);
      for (Eigen::Index i = 0; i < n; ++i) {
        out.x(i, fi) = col.level[static_cast<std::size_t>(i)] == *ft.level ? 1.0 : 0.0;
      }
    } else {
      out.feature_names.push_back(ft.column);
      for (Eigen::Index i = 0; i < n; ++i) {
        out.x(i, fi) = (col.numeric[static_cast<std::size_t>(i)] - ft.mean) / ft.scale;
      }
    }
  }
  return out;
}

StandardizeResult standardize(const RawDataset& data) {
  StandardizeResult res;
  res.transform = fit_standardization(data);
  res.dataset = apply_standardization(data, res.transform);
  return res;
}

std::vector<Split> stratified_split(const Outcomes& outcomes,
                                    std::uint64_t seed) {
  const std::size_t n = outcomes.size();
  if (n < 20) {
    throw Error("stratified_split needs at least 20 records, got " +
                std::to_string(n));
  }
  std::vector<std::size_t> cells[4];
  for (std::size_t i = 0; i < n; ++i) {
    cells[2 * outcomes.delta[i] + outcomes.a[i]].push_back(i);
  }
  for (int c = 0; c < 4; ++c) {
    const std::size_t m = cells[c].size();
    if (m > 0 && m < 3) {
      throw Error("too few records to stratify: (event=" + std::to_string(c / 2) +
                  ", treated=" + std::to_string(c % 2) + ") cell has " +
                  std::to_string(m));
    }
  }

  // Largest-remainder allocation so the global split sizes match the
  // 70/15/15 targets while every cell keeps its own proportions.
  auto allocate = [&](const std::vector<double>& want, std::size_t total,
                      const std::vector<std::size_t>& cap) {
    std::vector<std::size_t> got(4);
    std::vector<std::pair<double, int>> rem;
    std::size_t sum = 0;
    for (int c = 0; c < 4; ++c) {
      got[c] = std::min(cap[c], static_cast<std::size_t>(std::floor(want[c])));
      sum += got[c];
      rem.push_back({want[c] - std::floor(want[c]), c});
    }
    std::stable_sort(rem.begin(), rem.end(),
                     [](auto& l, auto& r) { return l.first > r.first; });
    for (std::size_t k = 0; sum < total && k < 8; ++k) {
      const int c = rem[k % 4].second;
      if (got[c] < cap[c]) {
        ++got[c];
        ++sum;
      }
    }
    return got;
  };

  const auto nd = static_cast<double>(n);
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.70 * nd));
  const std::size_t n_valid = static_cast<std::size_t>(std::llround(0.15 * nd));
  std::vector<double> want_train(4), want_valid(4);
  std::vector<std::size_t> cap(4);
  for (int c = 0; c < 4; ++c) {
    want_train[c] = 0.70 * static_cast<double>(cells[c].size());
    want_valid[c] = 0.15 * static_cast<double>(cells[c].size());
    cap[c] = cells[c].size();
  }
  const auto train = allocate(want_train, n_train, cap);
  for (int c = 0; c < 4; ++c) cap[c] -= train[c];
  const auto valid = allocate(want_valid, n_valid, cap);

  std::vector<Split> labels(n, Split::kTest);
  for (int c = 0; c < 4; ++c) {
    Rng rng = Rng::substream(seed, 0x5B17, static_cast<std::uint64_t>(c));
    auto idx = cells[c];
    rng.shuffle(idx);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      if (k < train[c]) {
        labels[idx[k]] = Split::kTrain;
      } else if (k < train[c] + valid[c]) {
        labels[idx[k]] = Split::kValid;
      }
    }
  }
  return labels;
}

RawDataset with_split(RawDataset data, std::uint64_t seed) {
  data.split = stratified_split(data.outcomes, seed);
  return data;
}

std::vector<ProxyCounterfactual> nn_proxy_counterfactuals(
    const SurvivalDataset& data, Split query) {
  if (data.split.size() != data.size()) {
    throw Error("nn_proxy_counterfactuals requires split labels");
  }
  std::vector<std::size_t> pool[2];
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.split[i] == Split::kTrain) pool[data.outcomes.a[i]].push_back(i);
  }
  std::vector<ProxyCounterfactual> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.split[i] != query) continue;
    const int other = 1 - data.outcomes.a[i];
    const auto& candidates = pool[other];
    if (candidates.empty()) {
      throw Error("training split has no subject with treatment " +
                  std::to_string(other) + " to act as a counterfactual proxy");
    }
    const auto xi = data.x.row(static_cast<Eigen::Index>(i));
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = candidates.front();
    for (std::size_t j : candidates) {
      const double d = (data.x.row(static_cast<Eigen::Index>(j)) - xi).squaredNorm();
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    out.push_back({i, data.outcomes.y[best_j], data.outcomes.delta[best_j],
                   best_j, std::sqrt(best)});
  }
  return out;
}

}  // namespace csa
