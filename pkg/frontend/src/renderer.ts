/** three.js view: one instanced cube per active voxel, sphere markers for
 * clicks, orbit camera framed on the shape. Repainting (colors vs labels) is
 * purely local and never touches the service. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";

import type { ShapeDetail } from "./api";
import { labelColor, modelToDisplay, type Rgb } from "./colors";
import { pickVoxel, type Vec3 } from "./picking";

const CLICK_MARKER_COLOR = 0xffd21f; // click points drawn in yellow

export class VoxelView {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private controls: OrbitControls;
  private mesh: THREE.InstancedMesh | null = null;
  private markers = new THREE.Group();
  private shape: ShapeDetail | null = null;
  private baseColors: Rgb[] = [];

  constructor(private canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(45, 1, 0.01, 50);
    this.camera.position.set(1.6, 1.2, 1.6);
    this.controls = new OrbitControls(this.camera, canvas);
    this.controls.target.set(0.5, 0.5, 0.5);
    this.scene.background = new THREE.Color(0x10131a);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.75));
    const sun = new THREE.DirectionalLight(0xffffff, 1.4);
    sun.position.set(2, 3, 1.5);
    this.scene.add(sun);
    this.scene.add(this.markers);
    const animate = () => {
      requestAnimationFrame(animate);
      this.resize();
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  private resize(): void {
    const w = this.canvas.clientWidth;
    const h = this.canvas.clientHeight;
    if (this.canvas.width !== w || this.canvas.height !== h) {
      this.renderer.setSize(w, h, false);
      this.camera.aspect = w / Math.max(1, h);
      this.camera.updateProjectionMatrix();
    }
  }

  setShape(shape: ShapeDetail): void {
    this.shape = shape;
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
    }
    const s = 1 / shape.resolution;
    const geometry = new THREE.BoxGeometry(s * 0.96, s * 0.96, s * 0.96);
    const material = new THREE.MeshLambertMaterial();
    this.mesh = new THREE.InstancedMesh(geometry, material, shape.coords.length);
    const m = new THREE.Matrix4();
    shape.coords.forEach((c, i) => {
      m.setPosition((c[0] + 0.5) * s, (c[1] + 0.5) * s, (c[2] + 0.5) * s);
      this.mesh!.setMatrixAt(i, m);
    });
    this.baseColors = shape.gt_labels.map(() => [0.62, 0.64, 0.7] as Rgb);
    this.paintRgb(this.baseColors);
    this.scene.add(this.mesh);
    this.clearMarkers();
    this.frameShape();
  }

  private frameShape(): void {
    if (!this.shape) return;
    const s = 1 / this.shape.resolution;
    const box = new THREE.Box3();
    for (const c of this.shape.coords) {
      box.expandByPoint(new THREE.Vector3(c[0] * s, c[1] * s, c[2] * s));
      box.expandByPoint(new THREE.Vector3((c[0] + 1) * s, (c[1] + 1) * s, (c[2] + 1) * s));
    }
    const center = box.getCenter(new THREE.Vector3());
    const size = box.getSize(new THREE.Vector3()).length();
    this.controls.target.copy(center);
    this.camera.position.copy(center.clone().add(new THREE.Vector3(1, 0.8, 1).multiplyScalar(size)));
  }

  paintRgb(colors: Rgb[]): void {
    if (!this.mesh) return;
    const c = new THREE.Color();
    colors.forEach((rgb, i) => {
      c.setRGB(rgb[0], rgb[1], rgb[2]);
      this.mesh!.setColorAt(i, c);
    });
    if (this.mesh.instanceColor) this.mesh.instanceColor.needsUpdate = true;
  }

  /** Repaint from a segmentation response; pure re-render, no service call. */
  paintResult(colors: [number, number, number][] | null, labels: number[] | null, mode: "colors" | "labels"): void {
    if (!this.shape) return;
    if (mode === "labels" && labels) {
      this.paintRgb(labels.map((l) => labelColor(l)));
    } else if (colors) {
      this.paintRgb(colors.map((c) => modelToDisplay(c)));
    } else {
      this.paintRgb(this.baseColors);
    }
  }

  /** Screen point (canvas pixels) to the nearest active voxel, if any. */
  pick(px: number, py: number): [number, number, number] | null {
    if (!this.shape) return null;
    const rect = this.canvas.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((px - rect.left) / rect.width) * 2 - 1,
      -((py - rect.top) / rect.height) * 2 + 1
    );
    const ray = new THREE.Raycaster();
    ray.setFromCamera(ndc, this.camera);
    const origin: Vec3 = [ray.ray.origin.x, ray.ray.origin.y, ray.ray.origin.z];
    const dir: Vec3 = [ray.ray.direction.x, ray.ray.direction.y, ray.ray.direction.z];
    const hit = pickVoxel(origin, dir, this.shape.coords, this.shape.resolution);
    return hit ? hit.voxel : null;
  }

  addMarker(voxel: [number, number, number]): void {
    if (!this.shape) return;
    const s = 1 / this.shape.resolution;
    const marker = new THREE.Mesh(
      new THREE.SphereGeometry(s * 0.45, 12, 12),
      new THREE.MeshBasicMaterial({ color: CLICK_MARKER_COLOR })
    );
    marker.position.set((voxel[0] + 0.5) * s, (voxel[1] + 0.5) * s, (voxel[2] + 0.5) * s);
    this.markers.add(marker);
  }

  clearMarkers(): void {
    this.markers.clear();
  }
}
