#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rotpretext/dataset.hpp"

namespace rotpretext {

/// The four motion classes of the synthetic action set.
enum class MotionClass : int {
    kTranslateUp = 0,
    kTranslateRight = 1,
    kOscillate = 2,
    kExpandContract = 3,
};
inline constexpr int kMotionClassCount = 4;
const char* motion_class_name(MotionClass c);

/// Recipe for the procedural oriented-video dataset. Clips show a moving
/// geometric shape over an upright scene: a bright sky gradient at the top,
/// a dark ground bar at the bottom, and particles falling downward, so the
/// original orientation is inferable from content while the action class is
/// inferable only from the shape's motion. Same spec => byte-identical
/// output.
struct SynthSpec {
    std::uint64_t seed = 0;
    int clips_per_class = 25;
    int frames = 14;
    int height = 36;
    int width = 36;
    int channels = 1;           // 1 or 3
    double cue_strength = 1.0;  // scales the orientation cues, in (0,1]
};

struct RenderedClip {
    VideoClip clip;
    // Analytic shape-center (col,row) per frame, for tests and attention
    // tracking checks.
    std::vector<std::array<float, 2>> centers;
};

RenderedClip render_synthetic_clip(const SynthSpec& spec, MotionClass cls, int index);

/// Writes "<basename>_c<class>_<index>.rvc" clips plus "<basename>.idx"
/// under out_dir and returns the dataset (paths resolved).
LabeledDataset generate_synthetic_dataset(const SynthSpec& spec, const std::string& out_dir,
                                          const std::string& basename, Split split);

}  // namespace rotpretext
