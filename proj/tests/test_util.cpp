#include <cmath>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "steerlab/errors.hpp"
#include "steerlab/util.hpp"

using namespace steerlab;

TEST_CASE("rng is deterministic and reasonably distributed") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) {
        const double x = a.uniform();
        CHECK(x == b.uniform());
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
    }
    bool all_equal = true;
    for (int i = 0; i < 10; ++i) all_equal = all_equal && (a.uniform() == c.uniform());
    CHECK_FALSE(all_equal);

    // Box-Muller normals: mean and variance sanity over a big sample.
    Rng r(7);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double z = r.normal();
        s += z;
        s2 += z * z;
    }
    CHECK(std::fabs(s / n) < 0.05);
    CHECK(std::fabs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("rng uniform_int covers range and shuffle permutes") {
    Rng r(1);
    std::set<uint64_t> seen;
    for (int i = 0; i < 200; ++i) {
        const uint64_t v = r.uniform_int(5);
        CHECK(v < 5);
        seen.insert(v);
    }
    CHECK(seen.size() == 5);

    std::vector<size_t> xs{0, 1, 2, 3, 4, 5, 6, 7};
    auto orig = xs;
    r.shuffle(xs);
    auto sorted = xs;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == orig);
}

TEST_CASE("base64 round-trips bytes and doubles") {
    const std::string payload = "any carnal pleasure.";
    for (size_t len = 0; len <= payload.size(); ++len) {
        const std::string enc = base64_encode(payload.data(), len);
        const auto dec = base64_decode(enc);
        CHECK(std::string(dec.begin(), dec.end()) == payload.substr(0, len));
    }
    CHECK(base64_encode("sure.", 5) == "c3VyZS4=");

    std::vector<double> xs{0.0, -1.5, 3.141592653589793, 1e-300, -7.25e100};
    CHECK(base64_to_doubles(doubles_to_base64(xs)) == xs);

    CHECK_THROWS_AS(base64_decode("abc"), parse_error);
    CHECK_THROWS_AS(base64_decode("a!=="), parse_error);
}

TEST_CASE("format_double is shortest round-trip") {
    for (double v : {0.1, 1.0 / 3.0, 2.0, -0.0, 1e-12, 123456.789, 6.02214076e23}) {
        const std::string s = format_double(v);
        CHECK(std::strtod(s.c_str(), nullptr) == v);
    }
    CHECK(format_double(2.0) == "2");
    CHECK(format_double(0.5) == "0.5");
}

TEST_CASE("fnv1a64 distinguishes inputs and is stable") {
    CHECK(fnv1a64(std::string("")) == 0xcbf29ce484222325ull);
    CHECK(fnv1a64(std::string("a")) != fnv1a64(std::string("b")));
    CHECK(fnv1a64(std::string("steer")) == fnv1a64(std::string("steer")));
    CHECK(to_hex(0x1234abcdull) == "000000001234abcd");
}

TEST_CASE("atomic_write_file writes and read_file reads back") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "steerlab_util_test";
    fs::remove_all(dir);
    const fs::path p = dir / "nested" / "out.txt";
    atomic_write_file(p, "hello\n");
    CHECK(read_file(p) == "hello\n");
    atomic_write_file(p, "replaced");
    CHECK(read_file(p) == "replaced");
    CHECK_FALSE(fs::exists(p.string() + ".tmp"));
    fs::remove_all(dir);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
    std::vector<int> hits(257, 0);
    parallel_for(hits.size(), [&](size_t i) { hits[i]++; });
    for (int h : hits) CHECK(h == 1);

    CHECK_THROWS_AS(parallel_for(4,
                                 [](size_t i) {
                                     if (i == 2) throw argument_error("boom");
                                 }),
                    argument_error);
}
