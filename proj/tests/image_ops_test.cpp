#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "tokmark/corpus.hpp"
#include "tokmark/image.hpp"
#include "tokmark/rng.hpp"
#include "tokmark/transforms.hpp"

using namespace tokmark;
namespace fs = std::filesystem;

namespace {

ImageBuffer random_image(uint64_t seed, int n = 32) {
    Rng rng(seed);
    ImageBuffer img(n, n);
    for (auto& v : img.pixels) v = float(rng.uniform());
    return img;
}

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("tokmark_image_test_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i)
        m = std::max(m, std::fabs(double(a.pixels[i]) - double(b.pixels[i])));
    return m;
}

} // namespace

TEST_CASE("ppm round trips") {
    TempDir tmp;
    const auto p1 = (tmp.path / "a.ppm").string();
    const auto p2 = (tmp.path / "b.ppm").string();

    ImageBuffer zero(8, 8);
    save_ppm(zero, p1);
    save_ppm(load_ppm(p1), p2);
    CHECK(read_bytes(p1) == read_bytes(p2));

    ImageBuffer px(1, 1);
    px.at(0, 0, 0) = 1.0f;
    px.at(0, 0, 1) = 0.0f;
    px.at(0, 0, 2) = 128.0f / 255.0f;
    save_ppm(px, p1);
    const auto back = load_ppm(p1);
    CHECK(back.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(back.at(0, 0, 1) == doctest::Approx(0.0));
    CHECK(back.at(0, 0, 2) == doctest::Approx(128.0 / 255.0));

    for (uint64_t seed = 0; seed < 50; ++seed) {
        save_ppm(random_image(seed), p1);
        save_ppm(load_ppm(p1), p2);
        CHECK(read_bytes(p1) == read_bytes(p2));
    }
}

TEST_CASE("ppm rejects malformed input") {
    TempDir tmp;
    const auto path = (tmp.path / "bad.ppm").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n4 4\n255\n";
    }
    CHECK_THROWS(load_ppm(path));
    {
        std::ofstream out(path, std::ios::binary);
        out << "P6\n4 4\n255\nxx"; // truncated payload
    }
    CHECK_THROWS(load_ppm(path));
    CHECK_THROWS(load_ppm((tmp.path / "missing.ppm").string()));
}

TEST_CASE("identity and no-op parameters return the image bit-exactly") {
    const auto img = random_image(3);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec{})) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("blur:1"))) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("noise:0"))) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("brighten:1"))) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("jpeg_like:100"))) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("hflip:0"))) == 0.0);
    CHECK(max_abs_diff(img, apply_transform(img, TransformSpec::parse("crop:1"))) == 0.0);
}

TEST_CASE("hflip is an involution") {
    const auto img = random_image(4);
    const auto spec = TransformSpec::parse("hflip:1");
    const auto twice = apply_transform(apply_transform(img, spec), spec);
    CHECK(max_abs_diff(img, twice) == 0.0);
}

TEST_CASE("rotate by zero degrees is numerically exact") {
    const auto img = random_image(5);
    TransformSpec spec;
    spec.kind = TransformKind::rotate;
    spec.parameter = 0.0;
    CHECK(max_abs_diff(img, apply_transform(img, spec)) <= 1e-6);
}

TEST_CASE("rotate roundtrip error is bounded in the interior") {
    CorpusOptions opts;
    opts.count = 1;
    const auto img = synth_image(opts, 11, 0);
    const auto fwd = apply_transform(img, TransformSpec::parse("rotate:10"));
    const auto back = apply_transform(fwd, TransformSpec::parse("rotate:-10"));
    double total = 0.0;
    int count = 0;
    for (int y = 8; y < img.height - 8; ++y)
        for (int x = 8; x < img.width - 8; ++x)
            for (int c = 0; c < 3; ++c) {
                total += std::fabs(double(back.at(y, x, c)) - double(img.at(y, x, c)));
                ++count;
            }
    CHECK(total / count <= 0.02);
}

TEST_CASE("all transforms stay inside [0,1]") {
    const auto img = random_image(6, 64);
    for (const auto& entry : transform_grid()) {
        auto spec = entry.spec;
        spec.seed = 7;
        const auto out = apply_transform(img, spec);
        for (float v : out.pixels) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("noise with a fixed seed is reproducible") {
    const auto img = random_image(8);
    auto spec = TransformSpec::parse("noise:0.05:12345");
    const auto a = apply_transform(img, spec);
    const auto b = apply_transform(img, spec);
    CHECK(max_abs_diff(a, b) == 0.0);
    spec.seed = 54321;
    CHECK(max_abs_diff(a, apply_transform(img, spec)) > 0.0);
}

TEST_CASE("crop keeps the top-left corner content") {
    // A bright top-left quadrant stays bright after crop+upscale.
    ImageBuffer img(32, 32);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x)
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = 1.0f;
    // crop 0.75 keeps 24x24: the bright 16x16 stretches to ~21px on upscale.
    const auto out = apply_transform(img, TransformSpec::parse("crop:0.75"));
    CHECK(out.height == 32);
    CHECK(out.at(8, 8, 0) == doctest::Approx(1.0).epsilon(0.01));
    CHECK(out.at(30, 30, 0) == doctest::Approx(0.0).epsilon(0.01));
    CHECK(out.at(10, 18, 0) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("transform grid structure") {
    const auto grid = transform_grid();
    // Each family contains a no-op parameter.
    auto is_noop = [](const GridEntry& e) {
        switch (e.spec.kind) {
            case TransformKind::blur: return e.spec.parameter == 1;
            case TransformKind::noise: return e.spec.parameter == 0;
            case TransformKind::jpeg_like: return e.spec.parameter == 100;
            case TransformKind::brighten: return e.spec.parameter == 1;
            case TransformKind::rotate: return e.spec.parameter == 0;
            case TransformKind::hflip: return e.spec.parameter == 0;
            case TransformKind::crop: return e.spec.parameter == 1;
            default: return false;
        }
    };
    std::set<std::string> families_with_noop;
    for (const auto& e : grid)
        if (is_noop(e)) families_with_noop.insert(e.family);
    CHECK(families_with_noop.size() == 7);

    CHECK(summary_set(TransformCategory::valuemetric).size() == 4);
    CHECK(summary_set(TransformCategory::geometric).size() == 3);
    for (const auto& e : grid) CHECK_NOTHROW(e.spec.validate());
}

TEST_CASE("spec parsing round trip and range checks") {
    const auto spec = TransformSpec::parse("noise:0.1:42");
    CHECK(spec.kind == TransformKind::noise);
    CHECK(spec.parameter == 0.1);
    CHECK(spec.seed == 42);
    CHECK(TransformSpec::parse(spec.to_string()).parameter == 0.1);

    CHECK_THROWS_AS(TransformSpec::parse("blur:2"), std::invalid_argument);
    CHECK_THROWS_AS(TransformSpec::parse("crop:0"), std::invalid_argument);
    CHECK_THROWS_AS(TransformSpec::parse("warp:1"), std::invalid_argument);
    CHECK_THROWS_AS(TransformSpec::parse("hflip:0.5"), std::invalid_argument);
}
