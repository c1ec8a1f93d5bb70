#include "rotpretext/dataset.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

namespace rotpretext {

UnlabeledDataset unlabeled_view(const LabeledDataset& dataset) {
    UnlabeledDataset out;
    out.items.reserve(dataset.items.size());
    for (const auto& item : dataset.items) out.items.push_back({item.path});
    return out;
}

LabeledDataset load_dataset(const std::string& index_path, Split split) {
    std::ifstream is(index_path);
    if (!is) throw IoError("cannot open dataset index: " + index_path);
    const auto base = std::filesystem::path(index_path).parent_path();
    LabeledDataset out;
    out.split = split;
    std::string line;
    int lineno = 0;
    int max_label = -1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw FormatError(FormatError::Kind::BadValue,
                              index_path + ":" + std::to_string(lineno) + ": missing tab separator");
        const std::string rel = line.substr(0, tab);
        int label;
        try {
            label = std::stoi(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw FormatError(FormatError::Kind::BadValue,
                              index_path + ":" + std::to_string(lineno) + ": bad label");
        }
        if (label < 0)
            throw FormatError(FormatError::Kind::BadValue,
                              index_path + ":" + std::to_string(lineno) + ": negative label");
        out.items.push_back({(base / rel).string(), label});
        max_label = std::max(max_label, label);
    }
    out.class_count = max_label + 1;
    return out;
}

void save_index(const std::string& index_path, const std::vector<LabeledItem>& items) {
    std::ofstream os(index_path);
    if (!os) throw IoError("cannot open index for writing: " + index_path);
    for (const auto& item : items) os << item.path << "\t" << item.label << "\n";
    if (!os) throw IoError("failed writing index: " + index_path);
}

const VideoClip& ClipCache::get(std::size_t i) {
    if (i >= paths_.size()) throw ShapeError("clip index out of range");
    if (!loaded_[i]) {
        cache_[i] = load_clip(paths_[i]);
        loaded_[i] = true;
    }
    return cache_[i];
}

}  // namespace rotpretext
