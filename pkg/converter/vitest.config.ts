import { defineConfig } from 'vitest/config';

export default defineConfig({
  test: {
    testTimeout: 180_000,
    hookTimeout: 180_000,
    // The specs materialize full-size synthetic checkpoints (~80 MB each);
    // running files in parallel multiplies the peak footprint.
    fileParallelism: false,
  },
});
