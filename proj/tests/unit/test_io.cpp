#include <doctest.h>
#include <zlib.h>

#include <cmath>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "sfmm/io.hpp"
#include "sfmm/simulate.hpp"

using namespace sfmm;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("sfmm_io_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

FunctionalDataset small_dataset(std::size_t n = 5) {
  Rng rng(3);
  FunctionalDataset d;
  d.grid = {9, 12};
  for (std::size_t i = 0; i < n; ++i) {
    FunctionRecord r;
    r.id = "f" + std::to_string(i);
    r.subject_id = "s" + std::to_string(i / 2);
    r.unit_id = "u" + std::to_string(i);
    r.serial_level = 7.0 + i;
    r.covariates["age"] = 30.0 + 3.5 * i;
    d.records.push_back(r);
    d.values.push_back(oracle::random_matrix(9, 12, rng));
  }
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("checksums") {
  CHECK(fnv1a("", 0) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a("foobar", 6) == 0x85944171f73967e8ULL);
  CHECK(hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("matrix files") {
  const fs::path dir = scratch("matrix");
  Rng rng(1);
  const Matrix m = oracle::random_matrix(7, 3, rng);
  write_matrix(dir / "m.bin", m);
  CHECK(read_matrix(dir / "m.bin") == m);
  CHECK(fs::file_size(dir / "m.bin") == 4 + 4 + 8 + 8 + 7 * 3 * 8);
  // header then row-major doubles
  const std::string b = slurp(dir / "m.bin");
  double first, second;
  std::memcpy(&first, b.data() + 24, 8);
  std::memcpy(&second, b.data() + 32, 8);
  CHECK(first == m(0, 0));
  CHECK(second == m(0, 1));
  write_matrix_csv(dir / "m.csv", m);
  CHECK(read_matrix_csv(dir / "m.csv") == m);
  std::ofstream(dir / "bad.bin") << "SFMX";
  CHECK_THROWS_WITH_AS(read_matrix(dir / "bad.bin"), doctest::Contains("truncated_file"), Error);
  CHECK_THROWS_WITH_AS(read_matrix(dir / "missing.bin"), doctest::Contains("missing_file"), Error);
}

TEST_CASE("dataset round trip in every layout") {
  const FunctionalDataset d = small_dataset();
  for (auto layout : {DatasetLayout::binary, DatasetLayout::csv, DatasetLayout::container}) {
    const fs::path dir = scratch("dataset" + std::to_string(static_cast<int>(layout)));
    write_dataset(d, dir, layout);
    const FunctionalDataset r = read_dataset(dir / "manifest.json");
    REQUIRE(r.size() == d.size());
    CHECK(r.grid == d.grid);
    for (std::size_t i = 0; i < d.size(); ++i) {
      CHECK(r.values[i] == d.values[i]);
      CHECK(r.records[i].id == d.records[i].id);
      CHECK(r.records[i].subject_id == d.records[i].subject_id);
      CHECK(r.records[i].unit_id == d.records[i].unit_id);
      CHECK(r.records[i].serial_level == d.records[i].serial_level);
      CHECK(r.records[i].covariates == d.records[i].covariates);
    }
  }
  const DatasetSummary s = summarize(d);
  CHECK(s.functions == 5);
  CHECK(s.serial_levels.size() == 5);
  REQUIRE(s.covariate_ranges.size() == 1);
  CHECK(s.covariate_ranges[0].second.first == 30.0);
  CHECK(s.covariate_ranges[0].second.second == 44.0);
}

TEST_CASE("simulated pseudo-dataset loads") {
  SyntheticStudyOptions o;
  o.grid = {16, 16};
  o.wavelet.levels = 2;
  o.support = 20;
  const SyntheticStudy st = synthetic_study(o);
  const fs::path dir = scratch("pseudo");
  write_dataset(st.data, dir);
  const FunctionalDataset r = read_dataset(dir / "manifest.json");
  CHECK(r.size() == 306);
  CHECK(r.stacked() == st.data.stacked());
}

TEST_CASE("dataset validation errors") {
  FunctionalDataset d = small_dataset(3);
  SUBCASE("non-finite value cites the function and grid index") {
    const fs::path dir = scratch("nan");
    write_dataset(d, dir, DatasetLayout::binary);
    Matrix bad = d.values[1];
    bad(4, 7) = std::numeric_limits<double>::quiet_NaN();
    write_matrix(dir / "f1.bin", bad);
    CHECK_THROWS_WITH_AS(read_dataset(dir / "manifest.json"), doctest::Contains("'f1' has a non-finite value at grid index (4, 7)"), Error);
  }
  SUBCASE("mismatched grid names the file") {
    const fs::path dir = scratch("grid");
    write_dataset(d, dir, DatasetLayout::csv);
    write_matrix_csv(dir / "f2.csv", Matrix::Zero(9, 11));
    CHECK_THROWS_WITH_AS(read_dataset(dir / "manifest.json"), doctest::Contains("f2.csv has shape 9x11"), Error);
  }
  SUBCASE("container grid mismatch") {
    const fs::path dir = scratch("container");
    write_dataset(d, dir);
    std::string m = slurp(dir / "manifest.json");
    const auto pos = m.find("\"n_meridional\": 9");
    REQUIRE(pos != std::string::npos);
    m.replace(pos, 17, "\"n_meridional\": 8");
    write_atomic(dir / "manifest.json", m);
    CHECK_THROWS_WITH_AS(read_dataset(dir / "manifest.json"), doctest::Contains("dimension_mismatch"), Error);
  }
  SUBCASE("missing metadata") {
    const fs::path dir = scratch("meta");
    write_atomic(dir / "manifest.json", R"({"grid": {"n_meridional": 9, "n_circumferential": 12}, "functions": [{"id": "a"}]})");
    CHECK_THROWS_WITH_AS(read_dataset(dir / "manifest.json"), doctest::Contains("missing_metadata"), Error);
  }
  SUBCASE("duplicate ids") {
    d.records[2].id = "f0";
    CHECK_THROWS_AS(write_dataset(d, scratch("dup")), Error);
  }
}

TEST_CASE("basis files") {
  SyntheticStudyOptions o;
  o.grid = {16, 16};
  o.wavelet.levels = 2;
  o.support = 20;
  const SyntheticStudy st = synthetic_study(o);
  const BasisBuildReport rep = build_wavelet_basis(st.data, o.wavelet, 100.0, 0.995);
  const fs::path dir = scratch("basis");
  write_basis(dir / "b.bin", rep.basis);
  const BasisSystem b = read_basis(dir / "b.bin");
  CHECK(b.retained_set() == rep.basis.retained_set());
  CHECK(b.index_map() == rep.basis.index_map());
  CHECK(b.weights() == rep.basis.weights());
  CHECK(b.grid() == rep.basis.grid());
  const Vector c = rep.coefficients.row(3).transpose();
  CHECK(b.synthesize(c) == rep.basis.synthesize(c));

  const PcResult pc = pc_basis(rep.basis, rep.coefficients, 0.99);
  write_basis(dir / "pc.bin", pc.basis);
  const BasisSystem p = read_basis(dir / "pc.bin");
  REQUIRE(p.has_rotation());
  CHECK(p.rotation() == pc.basis.rotation());
  const Vector z = Vector::Ones(static_cast<Index>(p.size()));
  CHECK(p.synthesize(z) == pc.basis.synthesize(z));

  std::string bytes = slurp(dir / "b.bin");
  bytes[4] = 9;
  write_atomic(dir / "v.bin", bytes);
  CHECK_THROWS_WITH_AS(read_basis(dir / "v.bin"), doctest::Contains("unsupported version"), Error);
}

TEST_CASE("posterior files") {
  Rng rng(5);
  CoefficientPosterior p;
  p.k = 17;
  p.seed = 99;
  p.fixed_names = {"(Intercept)", "np(age).lin"};
  p.variance_names = {"np(age)", "eye:G0", "residual"};
  p.b = oracle::random_matrix(30, 2, rng);
  p.gamma.resize(30, 2);
  for (Index i = 0; i < p.gamma.size(); ++i) p.gamma.data()[i] = static_cast<std::uint8_t>(i % 3 == 0);
  p.variance = oracle::random_matrix(30, 3, rng).cwiseAbs();
  p.spline = {oracle::random_matrix(30, 7, rng)};
  p.start_variance = Vector::Ones(3);
  p.acceptance = Vector::Constant(3, 0.4);
  p.proposal_sd = Vector::Constant(3, 0.1);
  p.parameter_names = {"b:(Intercept)", "b:np(age).lin", "var:np(age)", "var:eye:G0", "var:residual"};
  p.geweke_z = oracle::random_vector(5, rng);
  p.geweke_p = Vector::Constant(5, 0.5);
  p.ess = Vector::Constant(5, 25.0);
  p.warnings = {"stall"};
  const fs::path dir = scratch("posterior");
  write_posterior(dir / "k.bin", p);
  const CoefficientPosterior r = read_posterior(dir / "k.bin");
  CHECK(r.k == 17);
  CHECK(r.seed == 99);
  CHECK(r.fixed_names == p.fixed_names);
  CHECK(r.variance_names == p.variance_names);
  CHECK(r.b == p.b);
  CHECK((r.gamma == p.gamma).all());
  CHECK(r.variance == p.variance);
  REQUIRE(r.spline.size() == 1);
  CHECK(r.spline[0] == p.spline[0]);
  CHECK(r.acceptance == p.acceptance);
  CHECK(r.geweke_z == p.geweke_z);
  CHECK(r.warnings == p.warnings);
  CHECK(r.parameter_names == p.parameter_names);
}

TEST_CASE("band tables and heatmaps") {
  const fs::path dir = scratch("bands");
  const SurfaceGrid grid{4, 5};
  BandSummary b;
  b.mean = Vector::LinSpaced(3, 0, 2);
  b.pw_lo = b.mean.array() - 1;
  b.pw_hi = b.mean.array() + 1;
  b.joint_lo = b.mean.array() - 2;
  b.joint_hi = b.mean.array() + 2;
  write_band_csv(dir / "b.csv", b, {0, 5, 19}, grid);
  const std::string text = slurp(dir / "b.csv");
  CHECK(text.rfind("location,theta,phi,mean,pw_lo,pw_hi,joint_lo,joint_hi\n", 0) == 0);
  CHECK(text.find("\n5,14,72,1,0,2,-1,3\n") != std::string::npos);
  CHECK(text.find("\n19,24,288,2,1,3,0,4\n") != std::string::npos);

  Vector surface(20);
  for (Index i = 0; i < 20; ++i) surface[i] = static_cast<double>(i);
  write_png_heatmap(dir / "h.png", surface, grid, 2);
  const std::string png = slurp(dir / "h.png");
  REQUIRE(png.size() > 33);
  CHECK(png.substr(0, 8) == std::string("\x89PNG\r\n\x1a\n", 8));
  auto be32 = [&](std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(png[at + i]);
    return v;
  };
  CHECK(png.substr(12, 4) == "IHDR");
  CHECK(be32(16) == 10);
  CHECK(be32(20) == 8);
  CHECK(be32(29) == crc32(0, reinterpret_cast<const Bytef*>(png.data() + 12), 17));
  const std::uint32_t idat = be32(33);
  CHECK(png.substr(37, 4) == "IDAT");
  std::string raw(8 * 11, '\0');
  uLongf len = raw.size();
  REQUIRE(uncompress(reinterpret_cast<Bytef*>(raw.data()), &len, reinterpret_cast<const Bytef*>(png.data() + 41), idat) == Z_OK);
  CHECK(len == raw.size());
  // row 0 is meridional index 0: values 0, 4, 8, 12, 16 across circumferential columns
  CHECK(raw[0] == 0);
  CHECK(static_cast<unsigned char>(raw[1]) == 0);
  CHECK(static_cast<unsigned char>(raw[3]) == std::lround(255.0 * 4 / 19));
  CHECK(static_cast<unsigned char>(raw[11 * 7 + 10]) == 255);
}
