#pragma once

// Folder / manifest ingestion.
//
// Layout:  root/normal/*.{png,jpg,jpeg,bmp}
//          root/anomalous/*.{png,...}          -> class 1
//          root/anomalous/<name>/*.{png,...}   -> classes 1.. in sorted name order
// or a root/manifest.csv with header "path,label" (paths relative to root).

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "common.hpp"
#include "core_data.hpp"
#include "image_io.hpp"

namespace iad {

struct IngestLayout {
    bool use_manifest = false;  // also auto-enabled when root/manifest.csv exists
    std::string manifest_name = "manifest.csv";
};

struct SkipRecord {
    std::string path;
    std::string reason;
};

struct IngestResult {
    std::vector<ImageSample> samples;
    std::vector<SkipRecord> skipped;
    std::vector<std::string> class_names;  // index = class_id
};

namespace detail {

inline bool is_image_extension(const std::filesystem::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

inline std::string relative_id(const std::filesystem::path& file, const std::filesystem::path& root) {
    return std::filesystem::relative(file, root).generic_string();
}

struct PendingFile {
    std::filesystem::path path;
    int label;
    int class_id;
};

inline void load_pending(const std::vector<PendingFile>& files, const std::filesystem::path& root,
                         IngestResult& result) {
    for (const auto& f : files) {
        if (!std::filesystem::exists(f.path)) {
            result.skipped.push_back({f.path.generic_string(), "missing file"});
            warn("skipping missing file " + f.path.generic_string());
            continue;
        }
        auto img = load_image(f.path.string());
        if (!img) {
            result.skipped.push_back({f.path.generic_string(), "undecodable"});
            warn("skipping undecodable file " + f.path.generic_string());
            continue;
        }
        if (img->height < 8 || img->width < 8) {
            result.skipped.push_back({f.path.generic_string(), "smaller than 8x8"});
            warn("skipping tiny image " + f.path.generic_string());
            continue;
        }
        ImageSample s;
        s.id = relative_id(f.path, root);
        s.image = std::move(*img);
        s.label = f.label;
        s.class_id = f.class_id;
        result.samples.push_back(std::move(s));
    }
    std::sort(result.samples.begin(), result.samples.end(),
              [](const ImageSample& a, const ImageSample& b) { return a.id < b.id; });
}

inline int parse_manifest_label(const std::string& raw) {
    std::string v = raw;
    v.erase(std::remove_if(v.begin(), v.end(), [](unsigned char c) { return std::isspace(c); }), v.end());
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "0" || v == "normal") return 0;
    if (v == "1" || v == "anomalous" || v == "anomaly") return 1;
    throw ValidationError("manifest label '" + raw + "' is not 0/1/normal/anomalous");
}

}  // namespace detail

inline IngestResult ingest_folder(const std::string& root_path, const IngestLayout& layout = {}) {
    namespace fs = std::filesystem;
    const fs::path root(root_path);
    if (!fs::is_directory(root)) throw ConfigError("dataset root '" + root_path + "' is not a directory");

    IngestResult result;
    std::vector<detail::PendingFile> files;
    const fs::path manifest = root / layout.manifest_name;

    if (layout.use_manifest || fs::exists(manifest)) {
        std::ifstream in(manifest);
        if (!in) throw ConfigError("cannot read manifest " + manifest.string());
        std::string line;
        std::getline(in, line);
        if (line.rfind("path", 0) != 0) throw ConfigError("manifest must start with header 'path,label'");
        while (std::getline(in, line)) {
            if (line.empty() || line == "\r") continue;
            auto comma = line.rfind(',');
            if (comma == std::string::npos) throw ValidationError("manifest line without label: " + line);
            int label = detail::parse_manifest_label(line.substr(comma + 1));
            files.push_back({root / line.substr(0, comma), label, label});
        }
        result.class_names = {"normal", "anomalous"};
    } else {
        const fs::path normal = root / "normal";
        const fs::path anomalous = root / "anomalous";
        if (!fs::is_directory(normal) || !fs::is_directory(anomalous))
            throw ConfigError("dataset root '" + root_path + "' must contain normal/ and anomalous/");
        result.class_names = {"normal"};
        for (const auto& e : fs::directory_iterator(normal))
            if (e.is_regular_file() && detail::is_image_extension(e.path())) files.push_back({e.path(), 0, 0});

        std::vector<fs::path> subdirs;
        bool loose_files = false;
        for (const auto& e : fs::directory_iterator(anomalous)) {
            if (e.is_directory()) subdirs.push_back(e.path());
            else if (e.is_regular_file() && detail::is_image_extension(e.path())) {
                files.push_back({e.path(), 1, 1});
                loose_files = true;
            }
        }
        std::sort(subdirs.begin(), subdirs.end());
        int next_class = 1;
        if (loose_files) {
            result.class_names.push_back("anomalous");
            next_class = 2;
        }
        for (const auto& dir : subdirs) {
            result.class_names.push_back(dir.filename().string());
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file() && detail::is_image_extension(e.path()))
                    files.push_back({e.path(), 1, next_class});
            ++next_class;
        }
        if (result.class_names.size() == 1) result.class_names.push_back("anomalous");
    }
    detail::load_pending(files, root, result);
    return result;
}

}  // namespace iad
