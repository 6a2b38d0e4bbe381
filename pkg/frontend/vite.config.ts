import { defineConfig } from "vite";

export default defineConfig({
  // assets are served from the backend's /studio mount, so keep URLs relative
  base: "./",
  server: {
    proxy: {
      "/api": "http://127.0.0.1:8000",
    },
  },
  build: {
    outDir: "dist",
    target: "es2022",
  },
});
