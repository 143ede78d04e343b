#include "svcsdm/data_model.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "svcsdm/errors.hpp"

namespace svcsdm {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::pair<double, double> distance_range(const SpatialCoordinates& coords) {
  const std::size_t n = coords.size();
  if (n < 2) return {0.0, 0.0};
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double d = coords.distance(a, b);
      lo = std::min(lo, d);
      hi = std::max(hi, d);
    }
  }
  return {lo, hi};
}

bool DetectionData::sampled(int site, int season) const {
  for (int k = 0; k < max_replicates; ++k)
    if (at(site, season, k) != kMissingObs) return true;
  return false;
}

bool DetectionData::detected(int site, int season) const {
  for (int k = 0; k < max_replicates; ++k)
    if (at(site, season, k) == 1) return true;
  return false;
}

std::vector<std::vector<int>> DetectionData::seasons_sampled() const {
  std::vector<std::vector<int>> out(n_sites());
  for (int j = 0; j < n_sites(); ++j)
    for (int t = 0; t < n_seasons; ++t)
      if (sampled(j, t)) out[j].push_back(t);
  return out;
}

const SiteSeasonCovariate* CovariateSet::find_occurrence(const std::string& name) const {
  for (const auto& c : occurrence)
    if (c.name == name) return &c;
  return nullptr;
}

const ReplicateCovariate* CovariateSet::find_detection(const std::string& name) const {
  for (const auto& c : detection)
    if (c.name == name) return &c;
  return nullptr;
}

const StratumLabels* CovariateSet::find_strata(const std::string& name) const {
  for (const auto& c : strata)
    if (c.name == name) return &c;
  return nullptr;
}

double CovariateSet::occ(const std::string& name, int site, int season) const {
  const auto* c = find_occurrence(name);
  if (!c) throw std::out_of_range("unknown occurrence covariate '" + name + "'");
  return c->values[static_cast<std::size_t>(site) * n_seasons + season];
}

double CovariateSet::det(const std::string& name, int site, int season, int rep) const {
  if (const auto* c = find_detection(name))
    return c->values[(static_cast<std::size_t>(site) * n_seasons + season) * max_replicates + rep];
  // Site-season covariates may also enter the detection model.
  if (find_occurrence(name)) return occ(name, site, season);
  throw std::out_of_range("unknown detection covariate '" + name + "'");
}

int CovariateSet::stratum(const std::string& name, int site) const {
  const auto* c = find_strata(name);
  if (!c) throw std::out_of_range("unknown stratum column '" + name + "'");
  return c->labels[site];
}

namespace {

Standardization fit_transform(const std::vector<double>& raw) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double v : raw)
    if (!std::isnan(v)) {
      sum += v;
      ++n;
    }
  if (n < 2) return {};
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : raw)
    if (!std::isnan(v)) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (!(sd > 0.0)) return {mean, 1.0};
  return {mean, sd};
}

template <typename Cov>
void apply_transform(Cov& c, bool standardize) {
  c.transform = standardize ? fit_transform(c.raw) : Standardization{};
  c.values.resize(c.raw.size());
  for (std::size_t i = 0; i < c.raw.size(); ++i)
    c.values[i] = std::isnan(c.raw[i]) ? kNaN : c.transform.apply(c.raw[i]);
}

}  // namespace

void CovariateSet::restandardize(bool standardize) {
  for (auto& c : occurrence) apply_transform(c, standardize);
  for (auto& c : detection) apply_transform(c, standardize);
}

// ---------------------------------------------------------------------------

bool OccupancyModelSpec::has_svc() const {
  return std::any_of(occurrence.begin(), occurrence.end(),
                     [](const auto& t) { return t.kind == OccurrenceTermKind::kSvc; });
}

std::vector<std::string> occurrence_coefficient_names(const OccupancyModelSpec& spec) {
  std::vector<std::string> names;
  for (const auto& t : spec.occurrence)
    if (t.kind == OccurrenceTermKind::kIntercept) {
      names.push_back("(Intercept)");
      break;
    }
  std::vector<std::string> mains;
  for (const auto& t : spec.occurrence)
    if (t.kind != OccurrenceTermKind::kIntercept &&
        std::find(mains.begin(), mains.end(), t.covariate) == mains.end())
      mains.push_back(t.covariate);
  names.insert(names.end(), mains.begin(), mains.end());
  for (const auto& t : spec.occurrence) {
    if (t.kind == OccurrenceTermKind::kQuadratic) names.push_back(t.covariate + "^2");
    if (t.kind == OccurrenceTermKind::kInteraction) names.push_back(t.covariate + ":" + t.modifier);
  }
  return names;
}

std::vector<std::string> detection_coefficient_names(const OccupancyModelSpec& spec,
                                                     int max_replicates) {
  std::vector<std::string> names;
  for (const auto& t : spec.detection)
    if (t.kind == DetectionTermKind::kIntercept) {
      names.push_back("(Intercept)");
      break;
    }
  for (const auto& t : spec.detection)
    if (t.kind == DetectionTermKind::kReplicateIntercept) {
      for (int k = 1; k <= max_replicates; ++k) names.push_back("rep[" + std::to_string(k) + "]");
      break;
    }
  std::vector<std::string> mains;
  for (const auto& t : spec.detection)
    if ((t.kind == DetectionTermKind::kLinear || t.kind == DetectionTermKind::kQuadratic) &&
        std::find(mains.begin(), mains.end(), t.covariate) == mains.end())
      mains.push_back(t.covariate);
  names.insert(names.end(), mains.begin(), mains.end());
  for (const auto& t : spec.detection)
    if (t.kind == DetectionTermKind::kQuadratic) names.push_back(t.covariate + "^2");
  return names;
}

UniformPrior resolve_phi_prior(const PriorSpec& priors, const SpatialCoordinates& coords) {
  if (priors.phi) return *priors.phi;
  const auto [dmin, dmax] = distance_range(coords);
  if (!(dmin > 0.0)) return {0.01, 100.0};  // single site: the decay is unidentified anyway
  if (dmax <= dmin) return {1.5 / dmax, 6.0 / dmin};  // all pairs equidistant
  return {3.0 / dmax, 3.0 / dmin};
}

std::vector<std::string> MCMCConfig::problems() const {
  std::vector<std::string> out;
  if (n_chains < 1) out.push_back("chains must be >= 1");
  if (n_iterations < 1) out.push_back("iterations must be >= 1");
  if (n_burn < 0 || n_burn >= n_iterations) out.push_back("burn-in must satisfy 0 <= burn < iterations");
  if (n_thin < 1) out.push_back("thinning must be >= 1");
  else if (n_burn < n_iterations && draws_per_chain() < 1)
    out.push_back("(iterations - burn) / thin must be >= 1");
  if (neighbors < 1) out.push_back("neighbor count m must be >= 1");
  if (!(phi_proposal_sd > 0.0)) out.push_back("phi proposal sd must be > 0");
  if (!(rho_proposal_sd > 0.0)) out.push_back("rho proposal sd must be > 0");
  return out;
}

MCMCConfig paper_mcmc_profile() {
  MCMCConfig c;
  c.n_chains = 3;
  c.n_iterations = 100000;
  c.n_burn = 50000;
  c.n_thin = 50;
  c.neighbors = 15;
  return c;
}

MCMCConfig desk_mcmc_profile() {
  MCMCConfig c;
  c.n_chains = 3;
  c.n_iterations = 20000;
  c.n_burn = 10000;
  c.n_thin = 10;
  c.neighbors = 5;
  return c;
}

// ---------------------------------------------------------------------------
// Validation

namespace {

std::string term_label(const OccurrenceTerm& t) {
  std::string s = to_string(t.kind);
  if (!t.covariate.empty()) s += "(" + t.covariate + (t.modifier.empty() ? "" : ", " + t.modifier) + ")";
  return s;
}

void check_normal(const NormalPrior& p, const std::string& what, std::vector<std::string>& out) {
  if (!std::isfinite(p.mean)) out.push_back(what + " prior mean must be finite");
  if (!(p.var > 0.0) || !std::isfinite(p.var)) out.push_back(what + " prior variance must be > 0");
}

void check_ig(const InverseGammaPrior& p, const std::string& what, std::vector<std::string>& out) {
  if (!(p.shape > 0.0) || !(p.scale > 0.0))
    out.push_back(what + " inverse-gamma shape and scale must be > 0");
}

}  // namespace

std::vector<std::string> validate_spec(const OccupancyModelSpec& spec, const DetectionData& data,
                                       const CovariateSet& covs, int neighbors) {
  std::vector<std::string> out;
  const int J = data.n_sites();
  const int T = data.n_seasons;

  // Priors.
  check_normal(spec.priors.beta, "beta", out);
  check_normal(spec.priors.alpha, "alpha", out);
  for (const auto& [k, p] : spec.priors.beta_overrides) check_normal(p, "beta[" + k + "]", out);
  for (const auto& [k, p] : spec.priors.alpha_overrides) check_normal(p, "alpha[" + k + "]", out);
  check_ig(spec.priors.sigma2, "sigma2", out);
  check_ig(spec.priors.sigma2_eta, "sigma2_eta", out);
  check_ig(spec.priors.tau2_stratum, "tau2_stratum", out);
  if (spec.priors.phi && !(spec.priors.phi->lower > 0.0 && spec.priors.phi->lower < spec.priors.phi->upper))
    out.push_back("phi prior must satisfy 0 < lower < upper");
  if (!(spec.priors.rho.lower >= -1.0 && spec.priors.rho.upper <= 1.0 &&
        spec.priors.rho.lower < spec.priors.rho.upper))
    out.push_back("rho prior must lie within (-1, 1) with lower < upper");

  {
    const auto coef_names = occurrence_coefficient_names(spec);
    for (const auto& [k, _] : spec.priors.beta_overrides)
      if (std::find(coef_names.begin(), coef_names.end(), k) == coef_names.end())
        out.push_back("beta prior override names unknown coefficient '" + k + "'");
    const auto det_names = detection_coefficient_names(spec, data.max_replicates);
    for (const auto& [k, _] : spec.priors.alpha_overrides)
      if (std::find(det_names.begin(), det_names.end(), k) == det_names.end())
        out.push_back("alpha prior override names unknown coefficient '" + k + "'");
  }

  // Occurrence terms.
  std::set<std::tuple<int, std::string, std::string>> seen;
  std::set<std::string> used_occ;
  for (const auto& t : spec.occurrence) {
    const std::string mod_key = t.kind == OccurrenceTermKind::kInteraction ? t.modifier : "";
    if (!seen.insert({static_cast<int>(t.kind), t.covariate, mod_key}).second)
      out.push_back("duplicate occurrence term " + term_label(t));
    if (t.kind == OccurrenceTermKind::kIntercept) continue;
    if (t.covariate.empty()) {
      out.push_back(term_label(t) + " term needs a covariate");
      continue;
    }
    if (!covs.find_occurrence(t.covariate))
      out.push_back("occurrence covariate '" + t.covariate + "' not present in data");
    else
      used_occ.insert(t.covariate);
    if (t.kind == OccurrenceTermKind::kInteraction) {
      if (t.modifier.empty())
        out.push_back(term_label(t) + " needs a modifier covariate");
      else if (!covs.find_occurrence(t.modifier))
        out.push_back("interaction modifier '" + t.modifier + "' not present in data");
      else
        used_occ.insert(t.modifier);
    }
    if (t.kind == OccurrenceTermKind::kStratum) {
      const auto* s = covs.find_strata(t.modifier);
      if (!s) {
        out.push_back("stratum term on '" + t.covariate + "' references missing labels '" + t.modifier + "'");
      } else {
        std::vector<int> counts(static_cast<std::size_t>(std::max(s->n_strata, 0)), 0);
        bool bad = false;
        for (int lab : s->labels) {
          if (lab < 1 || lab > s->n_strata) bad = true;
          else ++counts[lab - 1];
        }
        if (bad || static_cast<int>(s->labels.size()) != J)
          out.push_back("stratum labels '" + t.modifier + "' must cover every site with values 1..S");
        for (int k = 0; k < s->n_strata; ++k)
          if (counts[k] == 0)
            out.push_back("stratum " + std::to_string(k + 1) + " of '" + t.modifier + "' is empty");
      }
    }
    if (t.kind == OccurrenceTermKind::kSvc && J < neighbors + 1)
      out.push_back("svc term on '" + t.covariate + "' requires J >= m+1 (J = " + std::to_string(J) +
                    ", m = " + std::to_string(neighbors) + ")");
  }
  if (spec.spatial_intercept && J < neighbors + 1)
    out.push_back("spatial intercept requires J >= m+1 (J = " + std::to_string(J) +
                  ", m = " + std::to_string(neighbors) + ")");
  if (spec.year_effect == YearEffect::kAr1 && T <= 1) out.push_back("ar1 requires T > 1");

  for (const auto& name : used_occ) {
    const auto* c = covs.find_occurrence(name);
    for (int j = 0; j < J; ++j)
      for (int t = 0; t < T; ++t)
        if (data.sampled(j, t) && std::isnan(c->values[static_cast<std::size_t>(j) * T + t])) {
          out.push_back("occurrence covariate '" + name + "' missing at sampled site '" +
                        data.coords.site_ids[j] + "' season " + std::to_string(data.first_season + t));
          goto next_cov;
        }
  next_cov:;
  }

  // Detection terms.
  std::set<std::pair<int, std::string>> seen_det;
  bool det_intercept = false, rep_intercept = false;
  for (const auto& t : spec.detection) {
    if (!seen_det.insert({static_cast<int>(t.kind), t.covariate}).second)
      out.push_back("duplicate detection term " + to_string(t.kind) + "(" + t.covariate + ")");
    if (t.kind == DetectionTermKind::kIntercept) det_intercept = true;
    if (t.kind == DetectionTermKind::kReplicateIntercept) rep_intercept = true;
    if (t.kind == DetectionTermKind::kLinear || t.kind == DetectionTermKind::kQuadratic) {
      if (!covs.find_detection(t.covariate) && !covs.find_occurrence(t.covariate)) {
        out.push_back("detection covariate '" + t.covariate + "' not present in data");
        continue;
      }
      bool reported = false;
      for (int j = 0; j < J && !reported; ++j)
        for (int s = 0; s < T && !reported; ++s)
          for (int k = 0; k < data.max_replicates && !reported; ++k)
            if (data.at(j, s, k) != DetectionData::kMissingObs &&
                std::isnan(covs.det(t.covariate, j, s, k))) {
              out.push_back("detection covariate '" + t.covariate + "' missing at observed replicate " +
                            std::to_string(k + 1) + " of site '" + data.coords.site_ids[j] + "'");
              reported = true;
            }
    }
  }
  if (det_intercept && rep_intercept)
    out.push_back("replicate_intercept cannot be combined with a detection intercept");
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool is_na(const std::string& s) { return s.empty() || s == "NA" || s == "na" || s == "NaN"; }

double parse_number(const std::string& s, const std::string& column, std::size_t row) {
  if (is_na(s)) return kNaN;
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end || !std::isfinite(v))
    throw IngestError("non-numeric value '" + s + "' in column '" + column + "'", row);
  return v;
}

long parse_integer(const std::string& s, const std::string& column, std::size_t row) {
  long v = 0;
  const char* end = s.data() + s.size();
  auto res = std::from_chars(s.data(), end, v);
  if (res.ec != std::errc() || res.ptr != end)
    throw IngestError("non-integer value '" + s + "' in column '" + column + "'", row);
  return v;
}

struct Row {
  std::size_t line;
  std::string site;
  double easting, northing;
  long season, replicate;
  std::int8_t y;
  std::vector<double> occ, det;
  std::vector<long> strata;
};

}  // namespace

IngestedData ingest_long_csv(const std::filesystem::path& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open '" + path.string() + "'");
  return parse_long_csv(in, schema);
}

IngestedData parse_long_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError("empty file (missing header row)");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  auto header = split_csv_line(line);
  for (auto& h : header) h = trim(h);
  auto col = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestError("missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_site = col(schema.site_id), c_e = col(schema.easting), c_n = col(schema.northing),
                    c_season = col(schema.season), c_rep = col(schema.replicate), c_y = col(schema.y);
  std::vector<std::size_t> c_occ, c_det, c_str;
  for (const auto& n : schema.occurrence_covariates) c_occ.push_back(col(n));
  for (const auto& n : schema.detection_covariates) c_det.push_back(col(n));
  for (const auto& n : schema.strata) c_str.push_back(col(n));

  std::vector<Row> rows;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (trim(line).empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw IngestError("expected " + std::to_string(header.size()) + " fields, found " +
                            std::to_string(f.size()),
                        row_no);
    for (auto& s : f) s = trim(s);
    Row r;
    r.line = row_no;
    r.site = f[c_site];
    if (r.site.empty()) throw IngestError("empty site identifier", row_no);
    r.easting = parse_number(f[c_e], schema.easting, row_no);
    r.northing = parse_number(f[c_n], schema.northing, row_no);
    if (std::isnan(r.easting) || std::isnan(r.northing))
      throw IngestError("missing coordinate", row_no);
    r.season = parse_integer(f[c_season], schema.season, row_no);
    r.replicate = parse_integer(f[c_rep], schema.replicate, row_no);
    if (r.replicate < 1) throw IngestError("replicate must be >= 1", row_no);
    const std::string& ys = f[c_y];
    if (is_na(ys)) r.y = DetectionData::kMissingObs;
    else if (ys == "0") r.y = 0;
    else if (ys == "1") r.y = 1;
    else throw IngestError("y value '" + ys + "' outside {0, 1}", row_no);
    for (std::size_t i = 0; i < c_occ.size(); ++i)
      r.occ.push_back(parse_number(f[c_occ[i]], schema.occurrence_covariates[i], row_no));
    for (std::size_t i = 0; i < c_det.size(); ++i)
      r.det.push_back(parse_number(f[c_det[i]], schema.detection_covariates[i], row_no));
    for (std::size_t i = 0; i < c_str.size(); ++i) {
      const auto& s = f[c_str[i]];
      if (is_na(s)) throw IngestError("missing stratum label in column '" + schema.strata[i] + "'", row_no);
      const long lab = parse_integer(s, schema.strata[i], row_no);
      if (lab < 1) throw IngestError("stratum labels must be >= 1", row_no);
      r.strata.push_back(lab);
    }
    rows.push_back(std::move(r));
  }
  if (rows.empty()) throw IngestError("no data rows");

  // Sites in identifier order.
  std::map<std::string, const Row*> first_row;
  for (const auto& r : rows) {
    auto [it, inserted] = first_row.emplace(r.site, &r);
    if (!inserted) {
      const Row& f0 = *it->second;
      if (f0.easting != r.easting || f0.northing != r.northing)
        throw IngestError("site '" + r.site + "' has inconsistent coordinates", r.line);
      if (f0.strata != r.strata)
        throw IngestError("site '" + r.site + "' has inconsistent stratum labels", r.line);
    }
  }
  IngestedData out;
  DetectionData& data = out.data;
  std::unordered_map<std::string, int> site_index;
  for (const auto& [id, r] : first_row) {
    site_index[id] = static_cast<int>(data.coords.size());
    data.coords.site_ids.push_back(id);
    data.coords.easting.push_back(r->easting);
    data.coords.northing.push_back(r->northing);
  }
  {
    std::vector<int> idx(data.coords.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::sort(idx.begin(), idx.end(), [&](int a, int b) {
      return std::pair(data.coords.easting[a], data.coords.northing[a]) <
             std::pair(data.coords.easting[b], data.coords.northing[b]);
    });
    for (std::size_t i = 1; i < idx.size(); ++i) {
      const int a = idx[i - 1], b = idx[i];
      if (data.coords.easting[a] == data.coords.easting[b] && data.coords.northing[a] == data.coords.northing[b])
        throw IngestError("sites '" + data.coords.site_ids[a] + "' and '" + data.coords.site_ids[b] +
                          "' share identical coordinates");
    }
  }

  long smin = rows.front().season, smax = rows.front().season, kmax = 1;
  for (const auto& r : rows) {
    smin = std::min(smin, r.season);
    smax = std::max(smax, r.season);
    kmax = std::max(kmax, r.replicate);
  }
  const int J = data.n_sites();
  data.first_season = static_cast<int>(smin);
  data.n_seasons = static_cast<int>(smax - smin + 1);
  data.max_replicates = static_cast<int>(kmax);
  const int T = data.n_seasons, K = data.max_replicates;
  data.y.assign(static_cast<std::size_t>(J) * T * K, DetectionData::kMissingObs);

  CovariateSet& covs = out.covariates;
  covs.n_sites = J;
  covs.n_seasons = T;
  covs.max_replicates = K;
  for (const auto& n : schema.occurrence_covariates)
    covs.occurrence.push_back({n, std::vector<double>(static_cast<std::size_t>(J) * T, kNaN), {}, {}});
  for (const auto& n : schema.detection_covariates)
    covs.detection.push_back({n, std::vector<double>(static_cast<std::size_t>(J) * T * K, kNaN), {}, {}});
  for (std::size_t i = 0; i < schema.strata.size(); ++i) {
    StratumLabels s;
    s.name = schema.strata[i];
    s.labels.resize(J);
    for (const auto& [id, r] : first_row) {
      s.labels[site_index[id]] = static_cast<int>(r->strata[i]);
      s.n_strata = std::max(s.n_strata, static_cast<int>(r->strata[i]));
    }
    covs.strata.push_back(std::move(s));
  }

  std::vector<std::size_t> seen_line(static_cast<std::size_t>(J) * T * K, 0);
  for (const auto& r : rows) {
    const int j = site_index[r.site];
    const int t = static_cast<int>(r.season - smin);
    const int k = static_cast<int>(r.replicate - 1);
    const std::size_t idx = data.index(j, t, k);
    if (seen_line[idx])
      throw IngestError("duplicate (site, season, replicate) = (" + r.site + ", " +
                            std::to_string(r.season) + ", " + std::to_string(r.replicate) +
                            "), first seen at row " + std::to_string(seen_line[idx]),
                        r.line);
    seen_line[idx] = r.line;
    data.y[idx] = r.y;
    const std::size_t ss = static_cast<std::size_t>(j) * T + t;
    for (std::size_t i = 0; i < r.occ.size(); ++i) {
      double& slot = covs.occurrence[i].raw[ss];
      if (std::isnan(r.occ[i])) continue;
      if (!std::isnan(slot) && slot != r.occ[i])
        throw IngestError("occurrence covariate '" + covs.occurrence[i].name +
                              "' varies within site-season (" + r.site + ", " + std::to_string(r.season) + ")",
                          r.line);
      slot = r.occ[i];
    }
    for (std::size_t i = 0; i < r.det.size(); ++i) covs.detection[i].raw[idx] = r.det[i];
  }

  for (int j = 0; j < J; ++j) {
    bool any = false;
    for (int t = 0; t < T && !any; ++t) any = data.sampled(j, t);
    if (!any) throw IngestError("site '" + data.coords.site_ids[j] + "' has no non-missing observation");
    for (int t = 0; t < T; ++t) {
      if (!data.sampled(j, t)) continue;
      for (const auto& c : covs.occurrence)
        if (std::isnan(c.raw[static_cast<std::size_t>(j) * T + t]))
          throw IngestError("occurrence covariate '" + c.name + "' missing at sampled site-season (" +
                            data.coords.site_ids[j] + ", " + std::to_string(smin + t) + ")");
      for (int k = 0; k < K; ++k) {
        if (data.at(j, t, k) == DetectionData::kMissingObs) continue;
        for (const auto& c : covs.detection)
          if (std::isnan(c.raw[data.index(j, t, k)]))
            throw IngestError("detection covariate '" + c.name + "' missing at observed replicate (" +
                                  data.coords.site_ids[j] + ", " + std::to_string(smin + t) + ", " +
                                  std::to_string(k + 1) + ")",
                              seen_line[data.index(j, t, k)]);
      }
    }
  }
  covs.restandardize(schema.standardize);
  return out;
}

void write_long_csv(std::ostream& out, const DetectionData& data, const CovariateSet& covs,
                    const CsvSchema& schema) {
  out << csv_field(schema.site_id) << ',' << csv_field(schema.easting) << ',' << csv_field(schema.northing)
      << ',' << csv_field(schema.season) << ',' << csv_field(schema.replicate) << ',' << csv_field(schema.y);
  for (const auto& c : covs.occurrence) out << ',' << csv_field(c.name);
  for (const auto& c : covs.detection) out << ',' << csv_field(c.name);
  for (const auto& c : covs.strata) out << ',' << csv_field(c.name);
  out << '\n';
  const int J = data.n_sites(), T = data.n_seasons, K = data.max_replicates;
  for (int j = 0; j < J; ++j) {
    for (int t = 0; t < T; ++t) {
      const std::size_t ss = static_cast<std::size_t>(j) * T + t;
      bool has_occ = false;
      for (const auto& c : covs.occurrence) has_occ |= !std::isnan(c.raw[ss]);
      bool written = false;
      for (int k = 0; k < K; ++k) {
        const std::size_t idx = data.index(j, t, k);
        bool has_det = false;
        for (const auto& c : covs.detection) has_det |= !std::isnan(c.raw[idx]);
        const bool observed = data.y[idx] != DetectionData::kMissingObs;
        const bool carrier = !written && has_occ && k == K - 1;
        if (!observed && !has_det && !carrier) continue;
        written = true;
        out << csv_field(data.coords.site_ids[j]) << ',' << format_double(data.coords.easting[j]) << ','
            << format_double(data.coords.northing[j]) << ',' << (data.first_season + t) << ',' << (k + 1)
            << ',';
        if (observed) out << static_cast<int>(data.y[idx]);
        else out << "NA";
        for (const auto& c : covs.occurrence) out << ',' << format_double(c.raw[ss]);
        for (const auto& c : covs.detection) out << ',' << format_double(c.raw[idx]);
        for (const auto& c : covs.strata) out << ',' << c.labels[j];
        out << '\n';
      }
    }
  }
}

namespace {

json nan_to_null(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(std::isnan(x) ? json(nullptr) : json(x));
  return a;
}

}  // namespace

json to_canonical_json(const DetectionData& data, const CovariateSet& covs) {
  json j;
  json sites = json::array();
  for (std::size_t i = 0; i < data.coords.size(); ++i)
    sites.push_back({{"id", data.coords.site_ids[i]},
                     {"easting", data.coords.easting[i]},
                     {"northing", data.coords.northing[i]}});
  j["sites"] = sites;
  j["first_season"] = data.first_season;
  j["n_seasons"] = data.n_seasons;
  j["max_replicates"] = data.max_replicates;
  json y = json::array();
  for (auto v : data.y) y.push_back(v == DetectionData::kMissingObs ? json(nullptr) : json(static_cast<int>(v)));
  j["y"] = y;
  json occ = json::object(), det = json::object(), str = json::object();
  for (const auto& c : covs.occurrence)
    occ[c.name] = {{"raw", nan_to_null(c.raw)}, {"mean", c.transform.mean}, {"sd", c.transform.sd}};
  for (const auto& c : covs.detection)
    det[c.name] = {{"raw", nan_to_null(c.raw)}, {"mean", c.transform.mean}, {"sd", c.transform.sd}};
  for (const auto& c : covs.strata) str[c.name] = c.labels;
  j["occurrence_covariates"] = occ;
  j["detection_covariates"] = det;
  j["strata"] = str;
  return j;
}

// ---------------------------------------------------------------------------
// JSON configuration

std::string to_string(OccurrenceTermKind kind) {
  switch (kind) {
    case OccurrenceTermKind::kIntercept: return "intercept";
    case OccurrenceTermKind::kLinear: return "linear";
    case OccurrenceTermKind::kQuadratic: return "quadratic";
    case OccurrenceTermKind::kStratum: return "stratum";
    case OccurrenceTermKind::kInteraction: return "interaction";
    case OccurrenceTermKind::kSvc: return "svc";
  }
  return "?";
}

std::string to_string(DetectionTermKind kind) {
  switch (kind) {
    case DetectionTermKind::kIntercept: return "intercept";
    case DetectionTermKind::kLinear: return "linear";
    case DetectionTermKind::kQuadratic: return "quadratic";
    case DetectionTermKind::kReplicateIntercept: return "replicate_intercept";
  }
  return "?";
}

namespace {

OccurrenceTermKind occ_kind(const std::string& s) {
  for (auto k : {OccurrenceTermKind::kIntercept, OccurrenceTermKind::kLinear, OccurrenceTermKind::kQuadratic,
                 OccurrenceTermKind::kStratum, OccurrenceTermKind::kInteraction, OccurrenceTermKind::kSvc})
    if (to_string(k) == s) return k;
  throw ValidationError({"unknown occurrence term kind '" + s + "'"});
}

DetectionTermKind det_kind(const std::string& s) {
  for (auto k : {DetectionTermKind::kIntercept, DetectionTermKind::kLinear, DetectionTermKind::kQuadratic,
                 DetectionTermKind::kReplicateIntercept})
    if (to_string(k) == s) return k;
  throw ValidationError({"unknown detection term kind '" + s + "'"});
}

json normal_json(const NormalPrior& p) { return {{"mean", p.mean}, {"var", p.var}}; }
json ig_json(const InverseGammaPrior& p) { return {{"shape", p.shape}, {"scale", p.scale}}; }
json unif_json(const UniformPrior& p) { return {{"lower", p.lower}, {"upper", p.upper}}; }

NormalPrior normal_from(const json& j, NormalPrior d) {
  return {j.value("mean", d.mean), j.value("var", d.var)};
}
InverseGammaPrior ig_from(const json& j, InverseGammaPrior d) {
  return {j.value("shape", d.shape), j.value("scale", d.scale)};
}
UniformPrior unif_from(const json& j, UniformPrior d) {
  return {j.value("lower", d.lower), j.value("upper", d.upper)};
}

}  // namespace

json to_json(const OccupancyModelSpec& spec) {
  json occ = json::array();
  for (const auto& t : spec.occurrence) {
    json e = {{"kind", to_string(t.kind)}};
    if (!t.covariate.empty()) e["covariate"] = t.covariate;
    if (t.kind == OccurrenceTermKind::kStratum) e["strata"] = t.modifier;
    if (t.kind == OccurrenceTermKind::kInteraction) e["modifier"] = t.modifier;
    occ.push_back(e);
  }
  json det = json::array();
  for (const auto& t : spec.detection) {
    json e = {{"kind", to_string(t.kind)}};
    if (!t.covariate.empty()) e["covariate"] = t.covariate;
    det.push_back(e);
  }
  const PriorSpec& p = spec.priors;
  json priors = {{"beta", normal_json(p.beta)},
                 {"alpha", normal_json(p.alpha)},
                 {"sigma2", ig_json(p.sigma2)},
                 {"sigma2_eta", ig_json(p.sigma2_eta)},
                 {"rho", unif_json(p.rho)},
                 {"tau2_stratum", ig_json(p.tau2_stratum)}};
  if (p.phi) priors["phi"] = unif_json(*p.phi);
  if (!p.beta_overrides.empty()) {
    json o = json::object();
    for (const auto& [k, v] : p.beta_overrides) o[k] = normal_json(v);
    priors["beta_overrides"] = o;
  }
  if (!p.alpha_overrides.empty()) {
    json o = json::object();
    for (const auto& [k, v] : p.alpha_overrides) o[k] = normal_json(v);
    priors["alpha_overrides"] = o;
  }
  return {{"occurrence", occ},
          {"spatial_intercept", spec.spatial_intercept},
          {"year_effect", spec.year_effect == YearEffect::kAr1 ? "ar1" : "none"},
          {"detection", det},
          {"priors", priors}};
}

OccupancyModelSpec spec_from_json(const json& j) {
  OccupancyModelSpec spec;
  try {
    for (const auto& e : j.at("occurrence")) {
      OccurrenceTerm t;
      t.kind = occ_kind(e.at("kind").get<std::string>());
      t.covariate = e.value("covariate", "");
      if (t.kind == OccurrenceTermKind::kStratum) t.modifier = e.value("strata", "");
      if (t.kind == OccurrenceTermKind::kInteraction) t.modifier = e.value("modifier", "");
      spec.occurrence.push_back(t);
    }
    for (const auto& e : j.value("detection", json::array())) {
      DetectionTerm t;
      t.kind = det_kind(e.at("kind").get<std::string>());
      t.covariate = e.value("covariate", "");
      spec.detection.push_back(t);
    }
    spec.spatial_intercept = j.value("spatial_intercept", false);
    const std::string ye = j.value("year_effect", "none");
    if (ye == "ar1") spec.year_effect = YearEffect::kAr1;
    else if (ye != "none") throw ValidationError({"unknown year_effect '" + ye + "'"});
    const json p = j.value("priors", json::object());
    PriorSpec& pr = spec.priors;
    if (p.contains("beta")) pr.beta = normal_from(p["beta"], pr.beta);
    if (p.contains("alpha")) pr.alpha = normal_from(p["alpha"], pr.alpha);
    if (p.contains("sigma2")) pr.sigma2 = ig_from(p["sigma2"], pr.sigma2);
    if (p.contains("sigma2_eta")) pr.sigma2_eta = ig_from(p["sigma2_eta"], pr.sigma2_eta);
    if (p.contains("tau2_stratum")) pr.tau2_stratum = ig_from(p["tau2_stratum"], pr.tau2_stratum);
    if (p.contains("rho")) pr.rho = unif_from(p["rho"], pr.rho);
    if (p.contains("phi")) pr.phi = unif_from(p["phi"], {});
    if (p.contains("beta_overrides"))
      for (const auto& [k, v] : p["beta_overrides"].items()) pr.beta_overrides[k] = normal_from(v, pr.beta);
    if (p.contains("alpha_overrides"))
      for (const auto& [k, v] : p["alpha_overrides"].items()) pr.alpha_overrides[k] = normal_from(v, pr.alpha);
  } catch (const json::exception& e) {
    throw ValidationError({std::string("malformed model spec: ") + e.what()});
  }
  return spec;
}

json to_json(const MCMCConfig& c) {
  return {{"chains", c.n_chains},
          {"iterations", c.n_iterations},
          {"burn", c.n_burn},
          {"thin", c.n_thin},
          {"neighbors", c.neighbors},
          {"seed", c.seed},
          {"phi_proposal_sd", c.phi_proposal_sd},
          {"rho_proposal_sd", c.rho_proposal_sd}};
}

MCMCConfig mcmc_from_json(const json& j) {
  MCMCConfig c;
  try {
    if (j.contains("profile")) {
      const std::string p = j["profile"].get<std::string>();
      if (p == "paper") c = paper_mcmc_profile();
      else if (p == "desk") c = desk_mcmc_profile();
      else throw ValidationError({"unknown MCMC profile '" + p + "'"});
    }
    c.n_chains = j.value("chains", c.n_chains);
    c.n_iterations = j.value("iterations", c.n_iterations);
    c.n_burn = j.value("burn", c.n_burn);
    c.n_thin = j.value("thin", c.n_thin);
    c.neighbors = j.value("neighbors", c.neighbors);
    c.seed = j.value("seed", c.seed);
    c.phi_proposal_sd = j.value("phi_proposal_sd", c.phi_proposal_sd);
    c.rho_proposal_sd = j.value("rho_proposal_sd", c.rho_proposal_sd);
  } catch (const json::exception& e) {
    throw ValidationError({std::string("malformed MCMC config: ") + e.what()});
  }
  return c;
}

json to_json(const CsvSchema& s) {
  return {{"columns",
           {{"site_id", s.site_id},
            {"easting", s.easting},
            {"northing", s.northing},
            {"season", s.season},
            {"replicate", s.replicate},
            {"y", s.y}}},
          {"occurrence_covariates", s.occurrence_covariates},
          {"detection_covariates", s.detection_covariates},
          {"strata", s.strata},
          {"standardize", s.standardize}};
}

CsvSchema schema_from_json(const json& j) {
  CsvSchema s;
  try {
    if (j.contains("columns")) {
      const auto& c = j["columns"];
      s.site_id = c.value("site_id", s.site_id);
      s.easting = c.value("easting", s.easting);
      s.northing = c.value("northing", s.northing);
      s.season = c.value("season", s.season);
      s.replicate = c.value("replicate", s.replicate);
      s.y = c.value("y", s.y);
    }
    s.occurrence_covariates = j.value("occurrence_covariates", s.occurrence_covariates);
    s.detection_covariates = j.value("detection_covariates", s.detection_covariates);
    s.strata = j.value("strata", s.strata);
    s.standardize = j.value("standardize", s.standardize);
  } catch (const json::exception& e) {
    throw ValidationError({std::string("malformed data schema: ") + e.what()});
  }
  return s;
}

}  // namespace svcsdm
