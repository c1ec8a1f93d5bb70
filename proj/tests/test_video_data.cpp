#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "rotpretext/clip.hpp"
#include "rotpretext/dataset.hpp"
#include "rotpretext/synth.hpp"
#include "test_util.hpp"

using namespace rotpretext;
namespace fs = std::filesystem;

namespace {

VideoClip random_clip(int c, int t, int h, int w, Rng& rng, float lo = 0.f, float hi = 1.f) {
    VideoClip clip = VideoClip::zeros(c, t, h, w);
    for (auto& v : clip.tensor.values()) v = static_cast<float>(rng.uniform(lo, hi));
    return clip;
}

}  // namespace

TEST_CASE("rvc round trip is bit identical") {
    test_util::TempDir dir("rvc");
    Rng rng(3);
    VideoClip clip = random_clip(3, 5, 7, 9, rng);
    save_clip(clip, dir.str("a.rvc"));
    VideoClip back = load_clip(dir.str("a.rvc"));
    REQUIRE(back.tensor.shape() == clip.tensor.shape());
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(back.tensor.values()[i] == clip.tensor.values()[i]);
}

TEST_CASE("rvc rejects bad magic, truncation and absurd extents") {
    test_util::TempDir dir("rvcbad");
    {
        std::ofstream os(dir.str("bad.rvc"), std::ios::binary);
        os << "NOPE" << std::string(16, '\0');
    }
    try {
        load_clip(dir.str("bad.rvc"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.kind == FormatError::Kind::BadMagic);
    }

    Rng rng(5);
    VideoClip clip = random_clip(1, 2, 4, 4, rng);
    save_clip(clip, dir.str("short.rvc"));
    fs::resize_file(dir.str("short.rvc"), 40);  // cut into the payload
    try {
        load_clip(dir.str("short.rvc"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.kind == FormatError::Kind::Truncated);
    }

    {
        std::ofstream os(dir.str("huge.rvc"), std::ios::binary);
        os << "RVC1";
        const unsigned char big[16] = {0xff, 0xff, 0xff, 0x7f, 1, 0, 0, 0,
                                       1,    0,    0,    0,    1, 0, 0, 0};
        os.write(reinterpret_cast<const char*>(big), 16);
    }
    try {
        load_clip(dir.str("huge.rvc"));
        CHECK(false);
    } catch (const FormatError& e) {
        CHECK(e.kind == FormatError::Kind::ExtentOverflow);
    }
}

TEST_CASE("rvc file size is 4 magic + 16 header + payload bytes") {
    test_util::TempDir dir("rvcsize");
    Rng rng(7);
    VideoClip clip = random_clip(3, 16, 112, 112, rng);
    save_clip(clip, dir.str("k.rvc"));
    const auto size = fs::file_size(dir.str("k.rvc"));
    CHECK(size == 4u + 16u + 3u * 16u * 112u * 112u * 4u);
}

TEST_CASE("sample_subclip whole-clip case and determinism") {
    Rng rng(11);
    VideoClip clip = random_clip(1, 6, 4, 4, rng);
    Rng r1(99);
    VideoClip whole = sample_subclip(clip, 6, r1);
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(whole.tensor.values()[i] == clip.tensor.values()[i]);

    Rng a(42), b(42);
    VideoClip s1 = sample_subclip(clip, 3, a);
    VideoClip s2 = sample_subclip(clip, 3, b);
    for (std::size_t i = 0; i < s1.tensor.size(); ++i)
        CHECK(s1.tensor.values()[i] == s2.tensor.values()[i]);

    CHECK_THROWS_AS(sample_subclip(clip, 7, a), ShapeError);
}

TEST_CASE("sample_subclip start positions are uniform") {
    // T=90, length=16: 75 valid starts. The first frame's first pixel marks
    // the start index.
    VideoClip clip = VideoClip::zeros(1, 90, 2, 2);
    for (int t = 0; t < 90; ++t) clip.at(0, t, 0, 0) = static_cast<float>(t);
    std::vector<int> counts(75, 0);
    Rng rng(2025);
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        VideoClip s = sample_subclip(clip, 16, rng);
        ++counts[static_cast<int>(s.at(0, 0, 0, 0))];
    }
    const double p = 1.0 / 75.0;
    const double sigma = std::sqrt(draws * p * (1 - p));
    for (int s = 0; s < 75; ++s)
        CHECK(std::abs(counts[s] - draws * p) <= 3.0 * sigma);
}

TEST_CASE("resize_bilinear identity, constants and the 2x4 hand case") {
    Rng rng(13);
    VideoClip clip = random_clip(2, 3, 5, 5, rng);
    VideoClip same = resize_bilinear(clip, 5, 5);
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(same.tensor.values()[i] == clip.tensor.values()[i]);

    VideoClip constant = VideoClip::zeros(1, 2, 3, 3);
    for (auto& v : constant.tensor.values()) v = 0.6f;
    VideoClip up = resize_bilinear(constant, 5, 7);
    for (float v : up.tensor.values()) CHECK(v == doctest::Approx(0.6f));

    VideoClip tiny = VideoClip::zeros(1, 1, 2, 2);
    tiny.at(0, 0, 0, 1) = 1.f;
    tiny.at(0, 0, 1, 1) = 1.f;
    VideoClip wide = resize_bilinear(tiny, 2, 4);
    const float expect[4] = {0.f, 0.25f, 0.75f, 1.f};
    for (int r = 0; r < 2; ++r)
        for (int x = 0; x < 4; ++x) CHECK(wide.at(0, 0, r, x) == doctest::Approx(expect[x]));
}

TEST_CASE("spatial_crop identity, centering and determinism") {
    Rng rng(17);
    VideoClip clip = random_clip(1, 2, 8, 8, rng);
    VideoClip whole = spatial_crop(clip, 8, CropMode::kCenter, nullptr);
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(whole.tensor.values()[i] == clip.tensor.values()[i]);

    VideoClip center = spatial_crop(clip, 4, CropMode::kCenter, nullptr);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(center.at(0, 0, y, x) == clip.at(0, 0, 2 + y, 2 + x));

    Rng a(5), b(5);
    VideoClip r1 = spatial_crop(clip, 4, CropMode::kRandom, &a);
    VideoClip r2 = spatial_crop(clip, 4, CropMode::kRandom, &b);
    for (std::size_t i = 0; i < r1.tensor.size(); ++i)
        CHECK(r1.tensor.values()[i] == r2.tensor.values()[i]);

    CHECK_THROWS_AS(spatial_crop(clip, 9, CropMode::kCenter, nullptr), ShapeError);
}

TEST_CASE("horizontal_flip probability edges and involution") {
    Rng rng(19);
    VideoClip clip = random_clip(1, 2, 3, 4, rng);
    Rng r0(1);
    VideoClip none = horizontal_flip(clip, 0.0, r0);
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(none.tensor.values()[i] == clip.tensor.values()[i]);

    Rng r1(2), r2(3);
    VideoClip once = horizontal_flip(clip, 1.0, r1);
    VideoClip twice = horizontal_flip(once, 1.0, r2);
    for (std::size_t i = 0; i < clip.tensor.size(); ++i)
        CHECK(twice.tensor.values()[i] == clip.tensor.values()[i]);

    VideoClip ab = VideoClip::zeros(1, 1, 1, 2);
    ab.at(0, 0, 0, 0) = 0.2f;
    ab.at(0, 0, 0, 1) = 0.9f;
    Rng r3(4);
    VideoClip ba = horizontal_flip(ab, 1.0, r3);
    CHECK(ba.at(0, 0, 0, 0) == 0.9f);
    CHECK(ba.at(0, 0, 0, 1) == 0.2f);
}

TEST_CASE("compute_dif constants, ramps and the short-clip error") {
    VideoClip constant = VideoClip::zeros(1, 4, 3, 3);
    for (auto& v : constant.tensor.values()) v = 0.4f;
    VideoClip d = compute_dif(constant);
    CHECK(d.frames() == 3);
    for (float v : d.tensor.values()) CHECK(v == 0.0f);

    const int T = 8;
    VideoClip ramp = VideoClip::zeros(1, T, 2, 2);
    for (int t = 0; t < T; ++t)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) ramp.at(0, t, y, x) = static_cast<float>(t) / T;
    VideoClip dr = compute_dif(ramp);
    for (float v : dr.tensor.values()) CHECK(v == doctest::Approx(1.0f / T));

    VideoClip single = VideoClip::zeros(1, 1, 2, 2);
    CHECK_THROWS_AS(compute_dif(single), ShapeError);
}

TEST_CASE("compute_dif commutes with horizontal flip") {
    Rng rng(23);
    VideoClip clip = random_clip(2, 5, 4, 4, rng);
    Rng ra(9), rb(9);
    VideoClip lhs = compute_dif(horizontal_flip(clip, 1.0, ra));
    VideoClip rhs = horizontal_flip(compute_dif(clip), 1.0, rb);
    REQUIRE(lhs.tensor.shape() == rhs.tensor.shape());
    for (std::size_t i = 0; i < lhs.tensor.size(); ++i)
        CHECK(lhs.tensor.values()[i] == rhs.tensor.values()[i]);
}

TEST_CASE("cumulative sum of differences reconstructs the clip") {
    Rng rng(29);
    VideoClip clip = random_clip(1, 6, 5, 5, rng);
    VideoClip d = compute_dif(clip);
    for (int t = 1; t < clip.frames(); ++t)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 5; ++x) {
                float acc = clip.at(0, 0, y, x);
                for (int s = 0; s < t; ++s) acc += d.at(0, s, y, x);
                CHECK(std::abs(acc - clip.at(0, t, y, x)) < 1e-6f);
            }
}

TEST_CASE("synthetic dataset generation is byte-deterministic") {
    SynthSpec spec;
    spec.seed = 77;
    spec.clips_per_class = 2;
    spec.frames = 8;
    spec.height = 24;
    spec.width = 24;
    test_util::TempDir a("syn_a"), b("syn_b");
    const auto da = generate_synthetic_dataset(spec, a.str(), "train", Split::kTrain);
    const auto db = generate_synthetic_dataset(spec, b.str(), "train", Split::kTrain);
    REQUIRE(da.items.size() == db.items.size());
    REQUIRE(da.items.size() == 8u);
    for (std::size_t i = 0; i < da.items.size(); ++i) {
        const auto ba = test_util::read_file_bytes(da.items[i].path);
        const auto bb = test_util::read_file_bytes(db.items[i].path);
        CHECK(ba == bb);
        CHECK(!ba.empty());
    }
}

TEST_CASE("translate-right clips move strictly rightward") {
    SynthSpec spec;
    spec.seed = 123;
    for (int i = 0; i < 6; ++i) {
        const auto r = render_synthetic_clip(spec, MotionClass::kTranslateRight, i);
        for (std::size_t t = 1; t < r.centers.size(); ++t)
            CHECK(r.centers[t][0] > r.centers[t - 1][0]);
    }
}

TEST_CASE("synthetic pixels stay in [0,1] for all classes") {
    SynthSpec spec;
    spec.seed = 321;
    spec.channels = 3;
    for (int cls = 0; cls < kMotionClassCount; ++cls) {
        const auto r = render_synthetic_clip(spec, static_cast<MotionClass>(cls), 0);
        for (float v : r.clip.tensor.values()) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
}

TEST_CASE("dataset index round trip and unlabeled view") {
    test_util::TempDir dir("idx");
    SynthSpec spec;
    spec.seed = 5;
    spec.clips_per_class = 1;
    spec.frames = 6;
    spec.height = 16;
    spec.width = 16;
    const auto ds = generate_synthetic_dataset(spec, dir.str(), "train", Split::kTrain);
    const auto loaded = load_dataset(dir.str("train.idx"), Split::kTrain);
    REQUIRE(loaded.items.size() == ds.items.size());
    CHECK(loaded.class_count == kMotionClassCount);
    for (std::size_t i = 0; i < loaded.items.size(); ++i) {
        CHECK(loaded.items[i].label == ds.items[i].label);
        CHECK(fs::exists(loaded.items[i].path));
    }
    const auto view = unlabeled_view(loaded);
    CHECK(view.items.size() == loaded.items.size());
}
