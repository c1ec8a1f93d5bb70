#pragma once

#include <string>
#include <vector>

#include "rotpretext/clip.hpp"

namespace rotpretext {

enum class Split { kTrain, kTest };

/// Clip locator without any label attached. The self-supervised training
/// path accepts only this view, so it cannot read action labels by
/// construction.
struct ClipRef {
    std::string path;  // resolved, loadable as-is
};

struct LabeledItem {
    std::string path;
    int label = 0;
};

struct LabeledDataset {
    std::vector<LabeledItem> items;
    int class_count = 0;
    Split split = Split::kTrain;
};

struct UnlabeledDataset {
    std::vector<ClipRef> items;
};

UnlabeledDataset unlabeled_view(const LabeledDataset& dataset);

/// Index file: one "relative/path/to/clip.rvc<TAB>label" line per clip,
/// paths relative to the index file's directory.
LabeledDataset load_dataset(const std::string& index_path, Split split);
void save_index(const std::string& index_path, const std::vector<LabeledItem>& items);

/// Loads every clip once and hands out references; index order.
class ClipCache {
public:
    explicit ClipCache(std::vector<std::string> paths) : paths_(std::move(paths)) {
        cache_.resize(paths_.size());
        loaded_.resize(paths_.size(), false);
    }
    const VideoClip& get(std::size_t i);
    std::size_t size() const { return paths_.size(); }

private:
    std::vector<std::string> paths_;
    std::vector<VideoClip> cache_;
    std::vector<bool> loaded_;
};

}  // namespace rotpretext
