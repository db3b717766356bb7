#include "sfmm/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <limits>
#include <set>
#include <sstream>

namespace sfmm {

static_assert(std::endian::native == std::endian::little, "file formats are little-endian");

using json = nlohmann::json;

namespace {

[[noreturn]] void io_fail(const std::string& tag, const std::string& message) {
  throw Error(ErrorKind::io, tag, message);
}

class Writer {
 public:
  template <class T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void text(const std::string& s) {
    put(static_cast<std::uint32_t>(s.size()));
    buf_ += s;
  }
  void doubles(const double* p, std::size_t n) { bytes(p, n * sizeof(double)); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string bytes, std::string source) : buf_(std::move(bytes)), source_(std::move(source)) {}
  template <class T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string text() {
    const auto n = get<std::uint32_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void doubles(double* out, std::size_t n) {
    need(n * sizeof(double));
    std::memcpy(out, buf_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
  }
  void magic(const char* m) {
    need(4);
    if (buf_.compare(pos_, 4, m) != 0) io_fail("bad_format", source_ + " is not a " + m + " file");
    pos_ += 4;
  }
  void version(std::uint32_t expected) {
    const auto v = get<std::uint32_t>();
    if (v != expected) io_fail("bad_format", source_ + " has unsupported version " + std::to_string(v));
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) io_fail("truncated_file", source_ + " ends early");
  }
  std::string buf_;
  std::string source_;
  std::size_t pos_ = 0;
};

std::string read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail("missing_file", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Matrix matrix_block(Reader& r, std::size_t rows, std::size_t cols) {
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> m(rows, cols);
  r.doubles(m.data(), rows * cols);
  return m;
}

void put_matrix_block(Writer& w, const Matrix& m) {
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
  w.doubles(rm.data(), static_cast<std::size_t>(rm.size()));
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }

Vector to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

}  // namespace

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const fs::path& path) {
  const std::string b = read_bytes(path);
  return fnv1a(b.data(), b.size());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

std::string read_text(const fs::path& path) { return read_bytes(path); }

void write_atomic(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_fail("write_failed", "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) io_fail("write_failed", "cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_matrix(const fs::path& path, const Matrix& m) {
  Writer w;
  w.bytes("SFMX", 4);
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.rows()));
  w.put<std::uint64_t>(static_cast<std::uint64_t>(m.cols()));
  put_matrix_block(w, m);
  write_atomic(path, w.str());
}

Matrix read_matrix(const fs::path& path) {
  Reader r(read_bytes(path), path.string());
  r.magic("SFMX");
  r.version(1);
  const auto rows = r.get<std::uint64_t>();
  const auto cols = r.get<std::uint64_t>();
  Matrix m = matrix_block(r, rows, cols);
  if (!r.done()) io_fail("bad_format", path.string() + " has trailing bytes");
  return m;
}

void write_matrix_csv(const fs::path& path, const Matrix& m) {
  std::ostringstream s;
  s << std::setprecision(17);
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) s << (j ? "," : "") << m(i, j);
    s << '\n';
  }
  write_atomic(path, s.str());
}

Matrix read_matrix_csv(const fs::path& path) {
  std::istringstream in(read_bytes(path));
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        row.push_back(std::stod(cell, &used));
      } catch (const std::exception&) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size())
      fail("dimension_mismatch", path.string() + " has ragged rows");
    rows.push_back(std::move(row));
  }
  Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(i, j) = rows[i][j];
  return m;
}

void write_dataset(const FunctionalDataset& data, const fs::path& dir, DatasetLayout layout) {
  data.validate();
  fs::create_directories(dir);
  json m;
  m["format"] = "sfmm-dataset";
  m["version"] = 1;
  m["grid"] = {{"n_meridional", data.grid.n_meridional},
               {"n_circumferential", data.grid.n_circumferential},
               {"theta_min", data.grid.theta_min},
               {"theta_max", data.grid.theta_max}};
  json fns = json::array();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const FunctionRecord& r = data.records[i];
    json f = {{"id", r.id}, {"subject", r.subject_id}, {"unit", r.unit_id}, {"serial_level", r.serial_level}};
    f["covariates"] = json::object();
    for (const auto& [k, v] : r.covariates) f["covariates"][k] = v;
    if (layout == DatasetLayout::binary) {
      f["file"] = "f" + std::to_string(i) + ".bin";
      write_matrix(dir / f["file"].get<std::string>(), data.values[i]);
    } else if (layout == DatasetLayout::csv) {
      f["file"] = "f" + std::to_string(i) + ".csv";
      write_matrix_csv(dir / f["file"].get<std::string>(), data.values[i]);
    }
    fns.push_back(std::move(f));
  }
  m["functions"] = std::move(fns);
  if (layout == DatasetLayout::container) {
    m["container"] = "values.bin";
    Writer w;
    w.bytes("SFMC", 4);
    w.put<std::uint32_t>(1);
    w.put<std::uint64_t>(data.size());
    w.put<std::uint64_t>(data.grid.n_meridional);
    w.put<std::uint64_t>(data.grid.n_circumferential);
    for (const Matrix& v : data.values) put_matrix_block(w, v);
    write_atomic(dir / "values.bin", w.str());
  }
  write_atomic(dir / "manifest.json", m.dump(1) + "\n");
}

FunctionalDataset read_dataset(const fs::path& manifest) {
  json m;
  try {
    m = json::parse(read_bytes(manifest));
  } catch (const json::parse_error& e) {
    fail("invalid_manifest", manifest.string() + ": " + e.what());
  }
  const fs::path dir = manifest.parent_path();
  FunctionalDataset d;
  try {
    if (!m.contains("grid") || !m.contains("functions")) fail("missing_metadata", manifest.string() + " needs grid and functions");
    const json& g = m.at("grid");
    d.grid.n_meridional = g.at("n_meridional").get<std::size_t>();
    d.grid.n_circumferential = g.at("n_circumferential").get<std::size_t>();
    d.grid.theta_min = g.value("theta_min", d.grid.theta_min);
    d.grid.theta_max = g.value("theta_max", d.grid.theta_max);
    std::set<std::string> ids;
    for (const json& f : m.at("functions")) {
      FunctionRecord r;
      for (const char* key : {"id", "subject", "unit", "serial_level"})
        if (!f.contains(key)) fail("missing_metadata", "function entry lacks '" + std::string(key) + "'");
      r.id = f.at("id").get<std::string>();
      if (!ids.insert(r.id).second) fail("duplicate_id", "function id '" + r.id + "' appears twice");
      r.subject_id = f.at("subject").get<std::string>();
      r.unit_id = f.at("unit").get<std::string>();
      r.serial_level = f.at("serial_level").get<double>();
      if (f.contains("covariates"))
        for (const auto& [k, v] : f.at("covariates").items()) r.covariates[k] = v.get<double>();
      d.records.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    fail("missing_metadata", manifest.string() + ": " + e.what());
  }
  const json& fns = m.at("functions");
  if (m.contains("container")) {
    const fs::path p = dir / m.at("container").get<std::string>();
    Reader r(read_bytes(p), p.string());
    r.magic("SFMC");
    r.version(1);
    const auto n = r.get<std::uint64_t>(), rows = r.get<std::uint64_t>(), cols = r.get<std::uint64_t>();
    if (n != d.records.size()) fail("dimension_mismatch", p.string() + " holds " + std::to_string(n) + " functions, manifest lists " + std::to_string(d.records.size()));
    if (rows != d.grid.n_meridional || cols != d.grid.n_circumferential)
      fail("dimension_mismatch", p.string() + " grid " + std::to_string(rows) + "x" + std::to_string(cols) + " differs from the manifest grid");
    for (std::size_t i = 0; i < n; ++i) d.values.push_back(matrix_block(r, rows, cols));
  } else {
    for (std::size_t i = 0; i < fns.size(); ++i) {
      if (!fns[i].contains("file")) fail("missing_metadata", "function '" + d.records[i].id + "' has no file");
      const fs::path p = dir / fns[i].at("file").get<std::string>();
      Matrix v = p.extension() == ".csv" ? read_matrix_csv(p) : read_matrix(p);
      if (static_cast<std::size_t>(v.rows()) != d.grid.n_meridional ||
          static_cast<std::size_t>(v.cols()) != d.grid.n_circumferential)
        fail("dimension_mismatch", p.string() + " has shape " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()) +
                                       ", grid is " + std::to_string(d.grid.n_meridional) + "x" +
                                       std::to_string(d.grid.n_circumferential));
      d.values.push_back(std::move(v));
    }
  }
  d.validate();
  return d;
}

DatasetSummary summarize(const FunctionalDataset& data) {
  DatasetSummary s;
  s.functions = data.size();
  s.grid = data.grid;
  std::set<double> levels;
  std::map<std::string, std::pair<double, double>> ranges;
  for (const auto& r : data.records) {
    levels.insert(r.serial_level);
    for (const auto& [k, v] : r.covariates) {
      auto it = ranges.find(k);
      if (it == ranges.end())
        ranges[k] = {v, v};
      else
        it->second = {std::min(it->second.first, v), std::max(it->second.second, v)};
    }
  }
  s.serial_levels.assign(levels.begin(), levels.end());
  s.covariate_ranges.assign(ranges.begin(), ranges.end());
  return s;
}

std::string DatasetSummary::to_string() const {
  std::ostringstream o;
  o << functions << " functions on a " << grid.n_meridional << "x" << grid.n_circumferential << " grid\n";
  o << "serial levels:";
  for (double l : serial_levels) o << ' ' << l;
  o << '\n';
  for (const auto& [k, r] : covariate_ranges) o << k << ": [" << r.first << ", " << r.second << "]\n";
  return o.str();
}

void write_basis(const fs::path& path, const BasisSystem& basis) {
  const SurfaceGrid& g = basis.grid();
  const WaveletSpec& spec = basis.wavelet().spec();
  Writer w;
  w.bytes("SFMB", 4);
  w.put<std::uint32_t>(1);
  w.put<std::uint64_t>(g.n_meridional);
  w.put<std::uint64_t>(g.n_circumferential);
  w.put(g.theta_min);
  w.put(g.theta_max);
  w.text(spec.filter);
  w.put<std::int32_t>(spec.levels);
  w.put<std::uint8_t>(spec.boundary_meridional == Boundary::periodic);
  w.put<std::uint8_t>(spec.boundary_circumferential == Boundary::periodic);
  w.put<std::uint64_t>(basis.retained_size());
  for (std::size_t i = 0; i < basis.retained_size(); ++i) {
    w.put<std::uint64_t>(basis.retained_set()[i]);
    const CoefficientIndex& c = basis.index_map()[i];
    for (int v : {c.scale_m, c.scale_c, c.loc_m, c.loc_c}) w.put<std::int32_t>(v);
  }
  w.put<std::uint64_t>(static_cast<std::uint64_t>(basis.weights().size()));
  w.doubles(basis.weights().data(), static_cast<std::size_t>(basis.weights().size()));
  w.put<std::uint8_t>(basis.has_rotation());
  if (basis.has_rotation()) {
    w.put<std::uint64_t>(static_cast<std::uint64_t>(basis.rotation().rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(basis.rotation().cols()));
    put_matrix_block(w, basis.rotation());
  }
  write_atomic(path, w.str());
}

BasisSystem read_basis(const fs::path& path) {
  Reader r(read_bytes(path), path.string());
  r.magic("SFMB");
  r.version(1);
  SurfaceGrid g;
  g.n_meridional = r.get<std::uint64_t>();
  g.n_circumferential = r.get<std::uint64_t>();
  g.theta_min = r.get<double>();
  g.theta_max = r.get<double>();
  WaveletSpec spec;
  spec.filter = r.text();
  spec.levels = r.get<std::int32_t>();
  spec.boundary_meridional = r.get<std::uint8_t>() ? Boundary::periodic : Boundary::reflection;
  spec.boundary_circumferential = r.get<std::uint8_t>() ? Boundary::periodic : Boundary::reflection;
  const auto n = r.get<std::uint64_t>();
  std::vector<std::size_t> retained(n);
  std::vector<CoefficientIndex> stored(n);
  for (std::size_t i = 0; i < n; ++i) {
    retained[i] = r.get<std::uint64_t>();
    stored[i] = {r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>(), r.get<std::int32_t>()};
  }
  Vector weights(r.get<std::uint64_t>());
  r.doubles(weights.data(), static_cast<std::size_t>(weights.size()));
  std::optional<Matrix> rotation;
  if (r.get<std::uint8_t>()) {
    const auto rows = r.get<std::uint64_t>(), cols = r.get<std::uint64_t>();
    rotation = matrix_block(r, rows, cols);
  }
  if (!r.done()) io_fail("bad_format", path.string() + " has trailing bytes");
  auto wavelet = std::make_shared<const TensorWavelet>(g, spec);
  BasisSystem b(wavelet, retained, weights);
  if (b.index_map() != stored) io_fail("bad_format", path.string() + " index map disagrees with its wavelet");
  if (rotation) b.set_rotation(*rotation);
  return b;
}

void write_posterior(const fs::path& path, const CoefficientPosterior& p) {
  json meta;
  meta["k"] = p.k;
  meta["seed"] = p.seed;
  meta["draws"] = p.draws();
  meta["fixed_names"] = p.fixed_names;
  meta["variance_names"] = p.variance_names;
  std::vector<std::size_t> spline_sizes;
  for (const Matrix& u : p.spline) spline_sizes.push_back(static_cast<std::size_t>(u.cols()));
  meta["spline_sizes"] = spline_sizes;
  meta["start_variance"] = to_std(p.start_variance);
  meta["acceptance"] = to_std(p.acceptance);
  meta["proposal_sd"] = to_std(p.proposal_sd);
  meta["parameter_names"] = p.parameter_names;
  meta["geweke_z"] = to_std(p.geweke_z);
  meta["geweke_p"] = to_std(p.geweke_p);
  meta["ess"] = to_std(p.ess);
  meta["warnings"] = p.warnings;
  Writer w;
  w.bytes("SFMP", 4);
  w.put<std::uint32_t>(1);
  const std::string m = meta.dump();
  w.put<std::uint64_t>(m.size());
  w.bytes(m.data(), m.size());
  const std::uint64_t g = p.draws();
  auto column = [&](const std::string& name, auto&& value) {
    w.text(name);
    w.put(g);
    for (std::uint64_t i = 0; i < g; ++i) w.put<double>(value(static_cast<Index>(i)));
  };
  for (std::size_t a = 0; a < p.fixed_names.size(); ++a)
    column("b:" + p.fixed_names[a], [&](Index i) { return p.b(i, static_cast<Index>(a)); });
  for (std::size_t a = 0; a < p.fixed_names.size(); ++a)
    column("gamma:" + p.fixed_names[a], [&](Index i) { return static_cast<double>(p.gamma(i, static_cast<Index>(a))); });
  for (std::size_t h = 0; h < p.variance_names.size(); ++h)
    column("var:" + p.variance_names[h], [&](Index i) { return p.variance(i, static_cast<Index>(h)); });
  for (std::size_t t = 0; t < p.spline.size(); ++t)
    for (Index m2 = 0; m2 < p.spline[t].cols(); ++m2)
      column("u" + std::to_string(t) + ":" + std::to_string(m2), [&](Index i) { return p.spline[t](i, m2); });
  write_atomic(path, w.str());
}

CoefficientPosterior read_posterior(const fs::path& path) {
  Reader r(read_bytes(path), path.string());
  r.magic("SFMP");
  r.version(1);
  const auto len = r.get<std::uint64_t>();
  std::string text(len, '\0');
  for (auto& c : text) c = r.get<char>();
  const json meta = json::parse(text);
  CoefficientPosterior p;
  p.k = meta.at("k").get<std::size_t>();
  p.seed = meta.at("seed").get<std::uint64_t>();
  const auto g = meta.at("draws").get<Index>();
  p.fixed_names = meta.at("fixed_names").get<std::vector<std::string>>();
  p.variance_names = meta.at("variance_names").get<std::vector<std::string>>();
  p.start_variance = to_eigen(meta.at("start_variance").get<std::vector<double>>());
  p.acceptance = to_eigen(meta.at("acceptance").get<std::vector<double>>());
  p.proposal_sd = to_eigen(meta.at("proposal_sd").get<std::vector<double>>());
  p.parameter_names = meta.at("parameter_names").get<std::vector<std::string>>();
  p.geweke_z = to_eigen(meta.at("geweke_z").get<std::vector<double>>());
  p.geweke_p = to_eigen(meta.at("geweke_p").get<std::vector<double>>());
  p.ess = to_eigen(meta.at("ess").get<std::vector<double>>());
  p.warnings = meta.at("warnings").get<std::vector<std::string>>();
  const auto a = static_cast<Index>(p.fixed_names.size());
  p.b.resize(g, a);
  p.gamma.resize(g, a);
  p.variance.resize(g, static_cast<Index>(p.variance_names.size()));
  for (std::size_t m : meta.at("spline_sizes").get<std::vector<std::size_t>>()) p.spline.emplace_back(g, m);
  Vector col(g);
  auto column = [&](const std::string& expected) {
    const std::string name = r.text();
    if (name != expected) io_fail("bad_format", path.string() + ": expected column '" + expected + "', found '" + name + "'");
    if (r.get<std::uint64_t>() != static_cast<std::uint64_t>(g)) io_fail("bad_format", path.string() + ": ragged column " + name);
    r.doubles(col.data(), static_cast<std::size_t>(g));
    return col;
  };
  for (Index j = 0; j < a; ++j) p.b.col(j) = column("b:" + p.fixed_names[j]);
  for (Index j = 0; j < a; ++j) p.gamma.col(j) = column("gamma:" + p.fixed_names[j]).array().cast<std::uint8_t>();
  for (Index h = 0; h < p.variance.cols(); ++h) p.variance.col(h) = column("var:" + p.variance_names[h]);
  for (std::size_t t = 0; t < p.spline.size(); ++t)
    for (Index m = 0; m < p.spline[t].cols(); ++m) p.spline[t].col(m) = column("u" + std::to_string(t) + ":" + std::to_string(m));
  if (!r.done()) io_fail("bad_format", path.string() + " has trailing bytes");
  return p;
}

void write_band_csv(const fs::path& path, const BandSummary& band, const std::vector<std::size_t>& locations,
                    const SurfaceGrid& grid) {
  std::ostringstream s;
  s << "location,theta,phi,mean,pw_lo,pw_hi,joint_lo,joint_hi\n";
  for (std::size_t l = 0; l < locations.size(); ++l) {
    const std::size_t t = locations[l];
    const Index i = static_cast<Index>(l);
    s << t << ',' << fmt(grid.theta(t % grid.n_meridional)) << ',' << fmt(grid.phi(t / grid.n_meridional)) << ','
      << fmt(band.mean[i]) << ',' << fmt(band.pw_lo[i]) << ',' << fmt(band.pw_hi[i]) << ',' << fmt(band.joint_lo[i])
      << ',' << fmt(band.joint_hi[i]) << '\n';
  }
  write_atomic(path, s.str());
}

void write_band_table(const fs::path& path, const std::string& key, const std::vector<double>& keys,
                      const BandSummary& band) {
  std::ostringstream s;
  s << key << ",mean,pw_lo,pw_hi,joint_lo,joint_hi\n";
  for (std::size_t l = 0; l < keys.size(); ++l) {
    const Index i = static_cast<Index>(l);
    s << fmt(keys[l]) << ',' << fmt(band.mean[i]) << ',' << fmt(band.pw_lo[i]) << ',' << fmt(band.pw_hi[i]) << ','
      << fmt(band.joint_lo[i]) << ',' << fmt(band.joint_hi[i]) << '\n';
  }
  write_atomic(path, s.str());
}

void write_png_heatmap(const fs::path& path, const Vector& values, const SurfaceGrid& grid, int scale) {
  if (static_cast<std::size_t>(values.size()) != grid.size()) fail("dimension_mismatch", "heatmap needs a full surface");
  if (scale < 1) fail("invalid_argument", "heatmap scale must be positive");
  const auto w = static_cast<std::uint32_t>(grid.n_circumferential * scale);
  const auto h = static_cast<std::uint32_t>(grid.n_meridional * scale);
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  std::string raw;
  raw.reserve(static_cast<std::size_t>(h) * (w + 1));
  for (std::uint32_t y = 0; y < h; ++y) {
    raw.push_back('\0');
    for (std::uint32_t x = 0; x < w; ++x) {
      const double v = values[static_cast<Index>(grid.location(y / scale, x / scale))];
      raw.push_back(static_cast<char>(std::lround(255.0 * (v - lo) / span)));
    }
  }
  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::string z(zlen, '\0');
  if (compress2(reinterpret_cast<Bytef*>(z.data()), &zlen, reinterpret_cast<const Bytef*>(raw.data()),
                static_cast<uLong>(raw.size()), 9) != Z_OK)
    io_fail("write_failed", "PNG compression failed");
  z.resize(zlen);
  std::string out("\x89PNG\r\n\x1a\n", 8);
  auto be32 = [](std::string& s, std::uint32_t v) {
    for (int i = 3; i >= 0; --i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  };
  auto chunk = [&](const char* type, const std::string& data) {
    be32(out, static_cast<std::uint32_t>(data.size()));
    std::string body(type, 4);
    body += data;
    out += body;
    be32(out, static_cast<std::uint32_t>(crc32(0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size()))));
  };
  std::string ihdr;
  be32(ihdr, w);
  be32(ihdr, h);
  ihdr += std::string("\x08\x00\x00\x00\x00", 5);
  chunk("IHDR", ihdr);
  chunk("IDAT", z);
  chunk("IEND", "");
  write_atomic(path, out);
}

}  // namespace sfmm
