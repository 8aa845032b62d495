#pragma once

#include <filesystem>
#include <string>

#include "mpseg/nifti.hpp"
#include "mpseg/volume.hpp"

namespace mpseg {

/// Case directory layout: <dir>/<id>/<id>_{t1,t1ce,t2,flair,seg}.nii[.gz]
inline std::filesystem::path case_file(const std::filesystem::path& data_dir,
                                       const std::string& case_id, const std::string& suffix,
                                       bool gz = true) {
    return data_dir / case_id / (case_id + "_" + suffix + (gz ? ".nii.gz" : ".nii"));
}

namespace detail {

inline std::filesystem::path find_case_file(const std::filesystem::path& data_dir,
                                            const std::string& case_id,
                                            const std::string& suffix) {
    auto gz = case_file(data_dir, case_id, suffix, true);
    if (std::filesystem::exists(gz)) return gz;
    auto plain = case_file(data_dir, case_id, suffix, false);
    if (std::filesystem::exists(plain)) return plain;
    return {};
}

} // namespace detail

/// Assemble a multi-modal case from a case directory. Modality images are
/// converted to float32; the label map, when present, must be uint8 on the
/// {0,1,2,4} alphabet. All five grids must be dimension-identical.
inline MultiModalCase load_case(const std::filesystem::path& data_dir, const std::string& case_id) {
    MultiModalCase c;
    c.case_id = case_id;
    for (Modality m : all_modalities) {
        const auto path = detail::find_case_file(data_dir, case_id, modality_name(m));
        if (path.empty())
            throw IoError("missing modality",
                          std::string(modality_name(m)) + " file for case " + case_id);
        c.modality(m) = to_float(read_nifti(path));
    }
    for (Modality m : all_modalities)
        if (c.modality(m).dims != c.modalities[0].dims)
            throw IoError("dimension mismatch",
                          std::string(modality_name(m)) + " differs in case " + case_id);

    const auto seg_path = detail::find_case_file(data_dir, case_id, "seg");
    if (!seg_path.empty()) {
        AnyVolume seg = read_nifti(seg_path);
        if (!std::holds_alternative<ByteVolume>(seg))
            throw IoError("bad label volume", "seg file is not uint8 in case " + case_id);
        c.labels = std::get<ByteVolume>(std::move(seg));
        validate_labels(*c.labels);
        if (c.labels->dims != c.modalities[0].dims)
            throw IoError("dimension mismatch", "seg differs in case " + case_id);
    }
    return c;
}

/// Write a case in the directory layout (gzip-compressed files).
inline void write_case(const std::filesystem::path& data_dir, const MultiModalCase& c) {
    c.validate();
    std::filesystem::create_directories(data_dir / c.case_id);
    for (Modality m : all_modalities)
        write_nifti(c.modality(m), case_file(data_dir, c.case_id, modality_name(m)));
    if (c.labels) write_nifti(*c.labels, case_file(data_dir, c.case_id, "seg"));
}

/// Case ids = subdirectory names containing at least a t1 file, sorted.
inline std::vector<std::string> list_case_ids(const std::filesystem::path& data_dir) {
    std::vector<std::string> ids;
    if (!std::filesystem::is_directory(data_dir)) return ids;
    for (const auto& entry : std::filesystem::directory_iterator(data_dir)) {
        if (!entry.is_directory()) continue;
        const std::string id = entry.path().filename().string();
        if (!detail::find_case_file(data_dir, id, "t1").empty()) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

} // namespace mpseg
