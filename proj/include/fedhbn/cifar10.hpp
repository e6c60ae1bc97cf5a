#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fedhbn/data.hpp"
#include "fedhbn/errors.hpp"

namespace fedhbn {

// Fixed preprocessing constants (the usual CIFAR-10 channel moments of the
// [0,1]-scaled training set).
inline constexpr std::array<double, 3> kCifar10Mean = {0.4914, 0.4822, 0.4465};
inline constexpr std::array<double, 3> kCifar10Std = {0.2470, 0.2435, 0.2616};

inline constexpr std::size_t kCifarRecordBytes = 3073;  // 1 label + 3*1024 pixels

// One CIFAR-10 binary file: records of 3073 bytes, label byte first, then
// 3072 pixel bytes in R,G,B plane order, each plane 32x32 row-major.
// Pixels are scaled to [0,1] and standardized per channel.
template <class T = float>
Dataset<T> load_cifar10_binary(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cifar10: cannot open '" + path + "'");
    f.seekg(0, std::ios::end);
    const std::streamoff bytes = f.tellg();
    f.seekg(0, std::ios::beg);
    if (bytes <= 0 || bytes % std::streamoff(kCifarRecordBytes) != 0)
        throw FormatError("cifar10: '" + path + "' is not a whole number of 3073-byte records");
    const std::size_t n = std::size_t(bytes) / kCifarRecordBytes;

    Dataset<T> ds;
    ds.num_classes = 10;
    ds.images = Tensor<T>({n, 3, 32, 32});
    ds.labels.resize(n);
    std::vector<unsigned char> rec(kCifarRecordBytes);
    for (std::size_t i = 0; i < n; ++i) {
        f.read(reinterpret_cast<char*>(rec.data()), std::streamsize(kCifarRecordBytes));
        if (!f) throw FormatError("cifar10: truncated read in '" + path + "'");
        if (rec[0] > 9) throw FormatError("cifar10: label byte > 9 in '" + path + "'");
        ds.labels[i] = int(rec[0]);
        T* img = ds.images.data.data() + i * 3 * 1024;
        for (std::size_t c = 0; c < 3; ++c) {
            const unsigned char* plane = rec.data() + 1 + c * 1024;
            for (std::size_t p = 0; p < 1024; ++p) {
                const double v = double(plane[p]) / 255.0;
                img[c * 1024 + p] = T((v - kCifar10Mean[c]) / kCifar10Std[c]);
            }
        }
    }
    return ds;
}

// The standard five training files concatenated.
template <class T = float>
Dataset<T> load_cifar10_train(const std::string& dir) {
    Dataset<T> all;
    for (int b = 1; b <= 5; ++b) {
        Dataset<T> part = load_cifar10_binary<T>(dir + "/data_batch_" + std::to_string(b) + ".bin");
        if (all.size() == 0) {
            all = std::move(part);
            continue;
        }
        all.images.shape[0] += part.images.shape[0];
        all.images.data.insert(all.images.data.end(), part.images.data.begin(),
                               part.images.data.end());
        all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
    }
    return all;
}

template <class T = float>
Dataset<T> load_cifar10_test(const std::string& dir) {
    return load_cifar10_binary<T>(dir + "/test_batch.bin");
}

}  // namespace fedhbn
