import { defineConfig } from "vitest/config";

export default defineConfig({
  build: {
    outDir: "dist",
    target: "es2020",
  },
  server: {
    proxy: {
      "/api": "http://127.0.0.1:8321",
    },
  },
  test: {
    environment: "jsdom",
    testTimeout: 120000,
    hookTimeout: 120000,
  },
});
