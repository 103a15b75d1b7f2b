#include <catch_amalgamated.hpp>

#include <sstream>

#include "oracles.hpp"
#include "winfrac/winfrac.hpp"

using namespace winfrac;
using Catch::Approx;

namespace {

Dataset parse(const std::string& text, const ColumnMap& map = ColumnMap::standard(2, 1)) {
  std::istringstream in(text);
  return read_csv(in, map);
}

const char* kThreeRows =
    "id,x1,x2,d_time,d_ind,t1_time,t1_ind\n"
    "a,0.5,1,5,1,2,1\n"
    "b,-1,0,3,0,3,0\n"
    "c,2,1,12,1,6,1\n";

}  // namespace

TEST_CASE("load: three-row file maps directly") {
  const Dataset ds = parse(kThreeRows);
  CHECK(ds.size() == 3);
  CHECK(ds.p() == 2);
  CHECK(ds.q_count() == 1);
  CHECK(ds[0].id == "a");
  CHECK(ds[1].fatal_ind == 0);
  CHECK(ds[2].nonfatal_obs[0] == 6.0);
  CHECK(ds.x_row(2)[0] == 2.0);
}

TEST_CASE("load: nonfatal time after fatal time names the row") {
  const std::string text =
      "id,x1,x2,d_time,d_ind,t1_time,t1_ind\n"
      "a,0,0,5,1,2,1\n"
      "b,0,0,3,1,4,1\n"
      "c,0,0,6,1,1,1\n";
  try {
    parse(text);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    REQUIRE(e.rows == std::vector<std::size_t>{2});
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
}

TEST_CASE("load: eight covariates with death and first hospitalization") {
  std::ostringstream os;
  os << "id";
  for (int k = 1; k <= 8; ++k) os << ",x" << k;
  os << ",d_time,d_ind,t1_time,t1_ind\n";
  for (int i = 0; i < 5; ++i) {
    os << i;
    for (int k = 1; k <= 8; ++k) os << ',' << (i * k % 3);
    os << ',' << 3.9 - 0.1 * i << ",1," << 1.0 + 0.1 * i << ",1\n";
  }
  const Dataset ds = parse(os.str(), ColumnMap::standard(8, 1));
  CHECK(ds.p() == 8);
  CHECK(ds.q_count() == 1);
}

TEST_CASE("load: missing column is a schema error") {
  ColumnMap m = ColumnMap::standard(2, 1);
  m.fatal_time = "death";
  CHECK_THROWS_AS(parse(kThreeRows, m), SchemaError);
}

TEST_CASE("load: bad cells are collected per row") {
  const std::string text =
      "id,x1,x2,d_time,d_ind,t1_time,t1_ind\n"
      "a,0,zz,5,1,2,1\n"
      "b,0,0,3,1,1,1\n"
      "c,0,0,-6,1,1,1\n"
      "d,0,0,6,2,1,1\n";
  try {
    parse(text);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.rows == std::vector<std::size_t>{1, 3, 4});
  }
}

TEST_CASE("load: duplicate ids are rejected") {
  const std::string text =
      "id,x1,x2,d_time,d_ind,t1_time,t1_ind\n"
      "a,0,0,5,1,2,1\n"
      "a,0,0,3,1,1,1\n";
  CHECK_THROWS_AS(parse(text), ParseError);
}

TEST_CASE("restrict: hand examples") {
  auto one = [](double t, int d, double L) {
    return restrict_subject(oracle::subject("s", {0.0}, t, d, std::min(t, 1.0), 0), L);
  };
  const auto a = one(5, 1, 8);
  CHECK(a.xi_D == 5.0);
  CHECK(a.delta_D == 1);
  const auto b = one(3, 0, 8);
  CHECK(b.xi_D == 3.0);
  CHECK(b.delta_D == 0);
  const auto c = one(12, 1, 8);
  CHECK(c.xi_D == 8.0);
  CHECK(c.delta_D == 1);
  CHECK(c.eta == 12.0);
  CHECK(b.delta_C == 1);
  CHECK(a.delta_C == 0);
}

TEST_CASE("restrict: censored past L becomes an observed event at L") {
  const auto r = restrict_subject(oracle::subject("s", {0.0}, 10, 0, 9, 0), 8);
  CHECK(r.xi_D == 8.0);
  CHECK(r.delta_D == 1);
  CHECK(r.xi[0] == 8.0);
  CHECK(r.delta[0] == 1);
}

TEST_CASE("restrict: nonpositive L is a domain error") {
  const Dataset ds = parse(kThreeRows);
  CHECK_THROWS_AS(restrict(ds, 0.0), DomainError);
  CHECK_THROWS_AS(restrict(ds, -1.0), DomainError);
  CHECK_NOTHROW(restrict(ds, kInfinity));
}

TEST_CASE("restrict: idempotent in L") {
  const Dataset ds = oracle::random_dataset(40, 2, 11);
  const double L = 5.0;
  const auto once = restrict(ds, L);
  std::vector<SubjectRecord> capped;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    SubjectRecord s = ds[i];
    s.fatal_obs = once[i].xi_D;
    s.fatal_ind = once[i].delta_D;
    s.nonfatal_obs = once[i].xi;
    s.nonfatal_ind = once[i].delta;
    capped.push_back(s);
  }
  const auto twice = restrict(Dataset(capped), L);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(twice[i].xi_D == once[i].xi_D);
    CHECK(twice[i].delta_D == once[i].delta_D);
    CHECK(twice[i].xi == once[i].xi);
    CHECK(twice[i].delta == once[i].delta);
  }
}

TEST_CASE("restrict: monotone in L") {
  const Dataset ds = oracle::random_dataset(60, 1, 12, 0.4, 20);
  for (double L1 : {1.0, 3.5, 7.0, 12.0})
    for (double L2 : {L1, L1 + 0.5, L1 * 2.0, 40.0}) {
      const auto a = restrict(ds, L1), b = restrict(ds, L2);
      for (std::size_t i = 0; i < ds.size(); ++i) CHECK(a[i].xi_D == std::min(b[i].xi_D, L1));
    }
}

TEST_CASE("choose_restriction: explicit, censoring and fatal quantiles") {
  const Dataset ds = parse(kThreeRows);
  CHECK(choose_restriction(ds, RestrictionRule::fixed(3.9)) == 3.9);

  std::vector<SubjectRecord> v;
  for (int k = 1; k <= 100; ++k) v.push_back(oracle::subject(std::to_string(k), {0.0}, k, 0, 0.5, 0));
  v.push_back(oracle::subject("e", {0.0}, 250, 1, 0.5, 0));
  const Dataset cens(std::move(v));
  CHECK(choose_restriction(cens, RestrictionRule::censoring_quantile(0.95)) == 95.0);
  CHECK(choose_restriction(cens, RestrictionRule::fatal_quantile(0.99)) == 250.0);

  std::vector<SubjectRecord> f;
  for (int k = 1; k <= 200; ++k) f.push_back(oracle::subject(std::to_string(k), {0.0}, 0.02 * k, 1, 0.01, 0));
  CHECK(choose_restriction(Dataset(std::move(f)), RestrictionRule::fatal_quantile(0.99)) == Approx(3.96));
}

TEST_CASE("choose_restriction: empty dataset is an error") {
  CHECK_THROWS_AS(choose_restriction(Dataset(), RestrictionRule::fixed(1.0)), DomainError);
  CHECK_THROWS_AS(Dataset(std::vector<SubjectRecord>{}), DomainError);
}

TEST_CASE("csv round trip preserves records exactly") {
  for (unsigned seed : {1u, 2u, 3u}) {
    const Dataset ds = simulate(GumbelHougaard{}, 50, seed);
    std::ostringstream os;
    write_csv(ds, os);
    std::istringstream in(os.str());
    const Dataset back = read_csv(in, ds.column_map());
    REQUIRE(back.size() == ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) {
      CHECK(back[i].id == ds[i].id);
      CHECK(back[i].covariates == ds[i].covariates);
      CHECK(back[i].fatal_obs == ds[i].fatal_obs);
      CHECK(back[i].fatal_ind == ds[i].fatal_ind);
      CHECK(back[i].nonfatal_obs == ds[i].nonfatal_obs);
      CHECK(back[i].nonfatal_ind == ds[i].nonfatal_ind);
    }
    std::ostringstream again;
    write_csv(back, again);
    CHECK(again.str() == os.str());
  }
}

TEST_CASE("censoring covariates can differ from model covariates") {
  const Dataset ds = simulate(IdentityGaussian{}, 20, 4);
  CHECK(ds.r() == 1);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(ds.cx_row(i)[0] == Approx(norm_cdf(ds.x_row(i)[0])));
  std::ostringstream os;
  write_csv(ds, os);
  std::istringstream in(os.str());
  const Dataset back = read_csv(in, ds.column_map());
  CHECK(back.r() == 1);
  CHECK(back[3].censoring_covariates == ds[3].censoring_covariates);
}
