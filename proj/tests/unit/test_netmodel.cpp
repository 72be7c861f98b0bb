#include "fixtures.hpp"

#include "emtgis/error.hpp"
#include "emtgis/netmodel.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace emtgis;

namespace {

bool has(const ValidationReport& r, ViolationKind k) {
    return std::any_of(r.begin(), r.end(), [k](const Violation& v) { return v.kind == k; });
}

}  // namespace

TEST_SUITE("netmodel") {

TEST_CASE("duplicate bus id is reported once") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0);
    j["buses"][1]["id"] = "B1";
    j["buses"].push_back({{"id", "B1"}, {"kind", "PQ"}, {"base_kv", 110.0}});
    j["branches"][0]["to"] = "B1";
    const ValidationReport r = validate_case(fixtures::parse(j));
    CHECK(std::count_if(r.begin(), r.end(), [](const Violation& v) { return v.kind == ViolationKind::DuplicateId; }) ==
          1);
}

TEST_CASE("bundled cases validate cleanly") {
    for (const char* name : {"ninebus.json", "ninebus_plain.json", "ninebus_2wb.json", "ninebus_3wb.json",
                             "ninebus_scripted.json", "hybrid.json", "twobus.json"}) {
        CAPTURE(name);
        CHECK(validate_case(fixtures::load(name)).empty());
    }
}

TEST_CASE("boundary bus owned by two regions") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0, "Boundary");
    j["grbcs"].push_back(fixtures::scripted("a", "2", "-0.1", "0"));
    j["grbcs"].push_back(fixtures::scripted("b", "2", "-0.1", "0"));
    CHECK(has(validate_case(fixtures::parse(j)), ViolationKind::BoundaryMultiplyOwned));
}

TEST_CASE("unowned boundary and bad tap are reported") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0, "Boundary");
    CHECK(has(validate_case(fixtures::parse(j)), ViolationKind::BoundaryUnowned));
    auto k = fixtures::two_bus(0.0, 0.1, 0.0, 0.0);
    k["branches"][0]["tap"] = 0.0;
    CHECK(has(validate_case(fixtures::parse(k)), ViolationKind::BadTap));
}

TEST_CASE("two-bus reactance assembly") {
    const AdmittanceMatrix y = build_admittance(fixtures::parse(fixtures::two_bus(0.0, 0.1, 0.0, 0.0)), false);
    const Complex series = 1.0 / Complex(0.0, 0.1);
    CHECK(std::abs(y.y(0, 0) - series) < 1e-12);
    CHECK(std::abs(y.y(0, 1) + series) < 1e-12);
    CHECK(std::abs(y.y(0, 0) - Complex(0.0, -10.0)) < 1e-12);
    CHECK(y.y.isApprox(y.y.transpose(), 0.0));
}

TEST_CASE("single shunt bus") {
    BusRecord b;
    b.id = "X";
    b.shunt_b = 0.5;
    const AdmittanceMatrix y = assemble_admittance({b}, {});
    CHECK(y.y(0, 0) == Complex(0.0, 0.5));
}

TEST_CASE("excluding regions keeps boundary buses only") {
    const CaseFile c = fixtures::load("ninebus.json");
    const AdmittanceMatrix full = build_admittance(c, false);
    const AdmittanceMatrix main = build_admittance(c, true);
    CHECK(main.index_of("B10") >= 0);
    CHECK(main.index_of("A1") < 0);
    CHECK(full.index_of("A1") >= 0);
}

TEST_CASE("isolated bus is singular") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0);
    j["buses"].push_back({{"id", "3"}, {"kind", "PQ"}, {"base_kv", 110.0}});
    CHECK_THROWS_AS(build_admittance(fixtures::parse(j), false), Error);
}

TEST_CASE("assembly is permutation consistent") {
    CaseFile c = fixtures::load("ninebus_plain.json");
    const AdmittanceMatrix a = build_admittance(c, false);
    std::mt19937 rng(3);
    std::shuffle(c.buses.begin(), c.buses.end(), rng);
    const AdmittanceMatrix b = build_admittance(c, false);
    for (std::size_t r = 0; r < a.dimension(); ++r) {
        for (std::size_t k = 0; k < a.dimension(); ++k) {
            const int br = b.index_of(a.bus_ids[r]);
            const int bk = b.index_of(a.bus_ids[k]);
            CHECK(a.y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(k)) == b.y(br, bk));
        }
    }
}

TEST_CASE("passive networks absorb power") {
    const CaseFile c = fixtures::load("ninebus_3wb.json");
    const AdmittanceMatrix y = build_admittance(c, false);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        Eigen::VectorXcd v(static_cast<Eigen::Index>(y.dimension()));
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = Complex(n(rng), n(rng));
        CHECK((v.adjoint() * y.y * v)(0).real() >= -1e-12);
    }
}

TEST_CASE("angles are read in degrees") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0);
    j["buses"][0]["angle_deg"] = 30.0;
    CHECK(fixtures::parse(j).buses[0].angle == doctest::Approx(kPi / 6.0));
}

TEST_CASE("malformed documents raise parse errors") {
    CHECK_THROWS_AS(parse_case("{not json"), Error);
    CHECK_THROWS_AS(load_case("/nonexistent/case.json"), Error);
}

}  // TEST_SUITE
